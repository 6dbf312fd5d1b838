"""Domain types for modalities and the masked fixed-layout representation.

A sample is a stack of 2M slot vectors laid out as all modality-specific
slots in modality order followed by all modality-shared slots, plus a
binary availability mask in the same layout. Absent modalities are
zero-filled and masked out as a pair (specific + shared together).

All values are immutable after construction; instances are safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MODALITIES: tuple[str, ...] = ("R", "N", "T")

UNIT_NORM_TOL = 1e-6
DEGENERATE_NORM = 1e-12


class RepresentationError(ValueError):
    pass


def modality_index(modality: str, modalities: Sequence[str] = DEFAULT_MODALITIES) -> int:
    try:
        return tuple(modalities).index(modality)
    except ValueError:
        raise RepresentationError(
            f"unknown modality {modality!r}; configured set is {tuple(modalities)}"
        ) from None


@dataclass(frozen=True)
class DecoupledFeature:
    """Specific/shared embedding pair produced by the encoder for one modality."""

    modality: str
    specific: np.ndarray
    shared: np.ndarray

    def __post_init__(self):
        specific = np.asarray(self.specific, dtype=np.float64)
        shared = np.asarray(self.shared, dtype=np.float64)
        if specific.ndim != 1 or shared.ndim != 1:
            raise RepresentationError("feature vectors must be 1-D")
        if specific.shape != shared.shape or specific.size == 0:
            raise RepresentationError(
                "specific and shared must share a positive dimension"
            )
        if not (np.isfinite(specific).all() and np.isfinite(shared).all()):
            raise RepresentationError("non-finite feature entries")
        specific.flags.writeable = False
        shared.flags.writeable = False
        object.__setattr__(self, "specific", specific)
        object.__setattr__(self, "shared", shared)

    @property
    def dim(self) -> int:
        return self.specific.shape[0]


@dataclass(frozen=True)
class SampleRepresentation:
    """Fixed-layout slot stack with availability mask.

    slots: (2M, d) float64, layout [sp_0..sp_{M-1}, sh_0..sh_{M-1}]
    mask:  (2M,) uint8, 1 where the slot is present
    """

    slots: np.ndarray
    mask: np.ndarray
    normalized: bool = False
    modalities: tuple[str, ...] = DEFAULT_MODALITIES

    def __post_init__(self):
        slots = np.ascontiguousarray(self.slots, dtype=np.float64)
        mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        modalities = tuple(self.modalities)
        M = len(modalities)
        if slots.ndim != 2 or slots.shape[0] != 2 * M:
            raise RepresentationError(f"slots must be (2M, d) with M={M}")
        if mask.shape != (2 * M,):
            raise RepresentationError("mask must have one flag per slot")
        if not np.isfinite(slots).all():
            raise RepresentationError("non-finite slot entries")
        if not mask.any():
            raise RepresentationError("no modality")
        for i in range(M):
            if mask[i] != mask[M + i]:
                raise RepresentationError(
                    f"mask pairing violated for modality {modalities[i]}"
                )
        absent = mask == 0
        if absent.any() and np.abs(slots[absent]).max() != 0.0:
            raise RepresentationError("masked-out slots must be zero")
        if self.normalized:
            norms = np.linalg.norm(slots[mask == 1], axis=1)
            if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
                raise RepresentationError("normalized flag set but slots not unit")
        slots.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "modalities", modalities)

    @property
    def num_modalities(self) -> int:
        return len(self.modalities)

    @property
    def dim(self) -> int:
        return self.slots.shape[1]

    def present(self) -> tuple[str, ...]:
        return tuple(m for i, m in enumerate(self.modalities) if self.mask[i])

    def has(self, modality: str) -> bool:
        return bool(self.mask[modality_index(modality, self.modalities)])

    def specific(self, modality: str) -> np.ndarray:
        return self.slots[modality_index(modality, self.modalities)]

    def shared(self, modality: str) -> np.ndarray:
        M = self.num_modalities
        return self.slots[M + modality_index(modality, self.modalities)]

    def feature(self, modality: str) -> DecoupledFeature:
        if not self.has(modality):
            raise RepresentationError(f"modality {modality!r} is absent")
        return DecoupledFeature(modality, self.specific(modality), self.shared(modality))


@dataclass(frozen=True)
class LabeledSample:
    identity: int
    camera: int
    representation: SampleRepresentation

    def __post_init__(self):
        if self.identity < 0 or self.camera < 0:
            raise RepresentationError("identity and camera labels must be >= 0")


def build_representation(
    features: Iterable[DecoupledFeature],
    present: Iterable[str],
    modalities: Sequence[str] = DEFAULT_MODALITIES,
) -> SampleRepresentation:
    """Assemble the zero-padded slot stack from per-modality features.

    ``present`` is the modality subset the features must cover exactly;
    absent modalities get paired zero slots and zero mask flags.
    """
    modalities = tuple(modalities)
    M = len(modalities)
    present = set(present)
    if not present:
        raise RepresentationError("no modality")
    features = list(features)
    seen: dict[str, DecoupledFeature] = {}
    for feat in features:
        if feat.modality in seen:
            raise RepresentationError(f"duplicate modality {feat.modality!r}")
        modality_index(feat.modality, modalities)
        seen[feat.modality] = feat
    if set(seen) != present:
        raise RepresentationError(
            f"features cover {sorted(seen)} but present set is {sorted(present)}"
        )
    dims = {feat.dim for feat in features}
    if len(dims) != 1:
        raise RepresentationError(f"inconsistent feature dimensions {sorted(dims)}")
    d = dims.pop()

    slots = np.zeros((2 * M, d), dtype=np.float64)
    mask = np.zeros(2 * M, dtype=np.uint8)
    for name, feat in seen.items():
        i = modality_index(name, modalities)
        slots[i] = feat.specific
        slots[M + i] = feat.shared
        mask[i] = 1
        mask[M + i] = 1
    return SampleRepresentation(slots, mask, normalized=False, modalities=modalities)


def normalize_slots(rep: SampleRepresentation) -> SampleRepresentation:
    """Rescale every present slot to unit L2 norm; zero slots stay zero."""
    slots = np.array(rep.slots)
    norms = np.linalg.norm(slots, axis=1)
    present = rep.mask == 1
    if present.any() and norms[present].min() < DEGENERATE_NORM:
        raise RepresentationError("degenerate feature")
    slots[present] = slots[present] / norms[present, None]
    return SampleRepresentation(
        slots, rep.mask, normalized=True, modalities=rep.modalities
    )
