"""Central finite-difference gradient checking.

Used by the test suite and the ``gradcheck`` CLI command to verify every
analytic gradient in the package. The checker is deliberately independent
of the autodiff engine: it only ever calls a scalar-valued function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

Array = np.ndarray

DEFAULT_STEP = 1e-5


def finite_difference_gradient(
    f: Callable[[Array], float],
    x: Array,
    step: float = DEFAULT_STEP,
    coords: np.ndarray | None = None,
) -> Array:
    """Central differences of ``f`` at ``x``.

    ``coords`` optionally restricts the probe to a subset of flat indices;
    unprobed entries are returned as NaN so callers cannot mistake them
    for computed values.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    grad = np.full(flat.size, np.nan)
    for j in coords:
        probe = flat.copy()
        probe[j] = flat[j] + step
        f_plus = f(probe.reshape(x.shape))
        probe[j] = flat[j] - step
        f_minus = f(probe.reshape(x.shape))
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(analytic: Array, numeric: Array) -> float:
    """max_i |a_i - n_i| / max(1e-8, ||a||_inf, ||n||_inf), NaNs skipped."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    valid = ~np.isnan(numeric)
    if not valid.any():
        return 0.0
    analytic = analytic[valid]
    numeric = numeric[valid]
    scale = max(1e-8, np.abs(analytic).max(), np.abs(numeric).max())
    return float(np.abs(analytic - numeric).max() / scale)


def directional_derivative(
    f: Callable[[Array], float], x: Array, direction: Array, step: float = DEFAULT_STEP
) -> float:
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    return float((f(x + step * direction) - f(x - step * direction)) / (2.0 * step))


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max relative error "
            f"{self.max_rel_error:.3e} (tolerance {self.tolerance:.0e})"
        )


def check_gradient(
    name: str,
    f: Callable[[Array], float],
    x: Array,
    analytic: Array,
    tolerance: float,
    step: float = DEFAULT_STEP,
    max_coords: int | None = None,
    seed: int = 0,
) -> CheckResult:
    """Compare ``analytic`` with central differences of ``f`` at ``x``.

    When ``max_coords`` is given and smaller than the input size, a seeded
    random subset of coordinates is probed.
    """
    x = np.asarray(x, dtype=np.float64)
    coords = None
    if max_coords is not None and x.size > max_coords:
        rng = np.random.default_rng(seed)
        coords = rng.choice(x.size, size=max_coords, replace=False)
        coords.sort()
    numeric = finite_difference_gradient(f, x, step=step, coords=coords)
    return CheckResult(name, relative_error(analytic, numeric), tolerance)


def check_multi(
    name: str,
    f: Callable[[Mapping[str, Array]], float],
    arrays: Mapping[str, Array],
    analytic: Mapping[str, Array],
    tolerance: float,
    step: float = DEFAULT_STEP,
    max_coords_per_array: int | None = None,
    seed: int = 0,
) -> CheckResult:
    """Gradient check over a dict of arrays (e.g. a parameter set)."""
    worst = 0.0
    for key in arrays:
        base = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}

        def f_single(x, key=key, base=base):
            probe = dict(base)
            probe[key] = x
            return f(probe)

        result = check_gradient(
            f"{name}[{key}]",
            f_single,
            base[key],
            analytic[key],
            tolerance,
            step=step,
            max_coords=max_coords_per_array,
            seed=seed,
        )
        worst = max(worst, result.max_rel_error)
    return CheckResult(name, worst, tolerance)
