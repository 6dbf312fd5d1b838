"""Similarity kernel backend selection.

The compiled Cython kernel is preferred when the extension built; the
numpy backend is the fallback. ``ANYREID_SIM_BACKEND`` forces a choice
("compiled" or "python"), which the benchmark uses to compare both.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _masked as _compiled
except ImportError:
    _compiled = None

HAS_COMPILED = _compiled is not None


def _select(name: str | None):
    if name in (None, ""):
        return _compiled if HAS_COMPILED else numpy_backend
    if name == "python":
        return numpy_backend
    if name == "compiled":
        if not HAS_COMPILED:
            raise RuntimeError(
                "ANYREID_SIM_BACKEND=compiled but the extension is not built"
            )
        return _compiled
    raise ValueError(f"unknown similarity backend {name!r}")


_active = _select(os.environ.get("ANYREID_SIM_BACKEND"))


def active_backend_name() -> str:
    return "compiled" if _active is not numpy_backend else "python"


def get_backend(name: str | None = None):
    """Return a kernel module; ``name`` overrides the import-time choice."""
    if name is None:
        return _active
    return _select(name)


def masked_similarity(q_slots, q_mask, g_slots, g_mask):
    return _active.masked_similarity(q_slots, q_mask, g_slots, g_mask)
