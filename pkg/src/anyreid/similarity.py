"""Masked any-to-any similarity scoring.

Two components per query/gallery pair, both computed on the unit-norm
slot stacks and masked for availability:

* specific: same-modality dot products, summed where both sides have the
  modality, divided by the product of the two specific-mask counts;
* shared: all cross-modality dot products of the shared slots, divided
  by the number of valid (i, j) pairs.

The total score is the plain average of the two. Everything runs in
float64; batched scoring is backed by the compiled kernel when built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .representation import SampleRepresentation


@dataclass(frozen=True)
class SimilarityBreakdown:
    sim_specific: float
    sim_shared: float
    sim_total: float
    valid_specific_pairs: int
    valid_shared_pairs: int


def _check_pair(q: SampleRepresentation, g: SampleRepresentation) -> None:
    if not (q.normalized and g.normalized):
        raise ValueError("similarity requires normalized representations")
    if q.dim != g.dim or q.modalities != g.modalities:
        raise ValueError("query and gallery representations are incompatible")


def sim_specific(q: SampleRepresentation, g: SampleRepresentation) -> float:
    _check_pair(q, g)
    M = q.num_modalities
    num = 0.0
    for m in range(M):
        if q.mask[m] and g.mask[m]:
            num += float(q.slots[m] @ g.slots[m])
    denom = int(q.mask[:M].sum()) * int(g.mask[:M].sum())
    return num / denom


def sim_shared(q: SampleRepresentation, g: SampleRepresentation) -> float:
    _check_pair(q, g)
    M = q.num_modalities
    pair_sim = q.slots[M:] @ g.slots[M:].T
    pair_mask = np.outer(q.mask[M:], g.mask[M:]).astype(np.float64)
    return float((pair_sim * pair_mask).sum() / pair_mask.sum())


def sim_total(q: SampleRepresentation, g: SampleRepresentation) -> SimilarityBreakdown:
    _check_pair(q, g)
    M = q.num_modalities
    sp = sim_specific(q, g)
    sh = sim_shared(q, g)
    joint = int((q.mask[:M] & g.mask[:M]).sum())
    shared_pairs = int(q.mask[M:].sum()) * int(g.mask[M:].sum())
    return SimilarityBreakdown(sp, sh, (sp + sh) / 2.0, joint, shared_pairs)


def score_matrix(
    queries: Sequence[SampleRepresentation],
    gallery: Sequence[SampleRepresentation],
    backend: str | None = None,
):
    """(sp, sh, sp_pairs, sh_pairs) arrays of shape (Q, G)."""
    reps = list(queries) + list(gallery)
    if reps:
        ref = reps[0]
        for rep in reps:
            _check_pair(ref, rep)
    if not queries or not gallery:
        empty = np.zeros((len(queries), len(gallery)))
        return empty, empty.copy(), empty.astype(np.int64), empty.astype(np.int64)
    q_slots = np.stack([q.slots for q in queries])
    q_mask = np.stack([q.mask for q in queries])
    g_slots = np.stack([g.slots for g in gallery])
    g_mask = np.stack([g.mask for g in gallery])
    return kernels.get_backend(backend).masked_similarity(
        q_slots, q_mask, g_slots, g_mask
    )


def total_scores(
    queries: Sequence[SampleRepresentation],
    gallery: Sequence[SampleRepresentation],
    backend: str | None = None,
) -> np.ndarray:
    sp, sh, _, _ = score_matrix(queries, gallery, backend=backend)
    return (sp + sh) / 2.0


def score_gallery(
    q: SampleRepresentation,
    gallery: Sequence[SampleRepresentation],
    backend: str | None = None,
) -> list[SimilarityBreakdown]:
    """One breakdown per gallery entry, in gallery order."""
    if not gallery:
        return []
    sp, sh, sp_pairs, sh_pairs = score_matrix([q], gallery, backend=backend)
    return [
        SimilarityBreakdown(
            float(sp[0, i]),
            float(sh[0, i]),
            (float(sp[0, i]) + float(sh[0, i])) / 2.0,
            int(sp_pairs[0, i]),
            int(sh_pairs[0, i]),
        )
        for i in range(len(gallery))
    ]


def brute_force_similarity_oracle(
    q: SampleRepresentation, g: SampleRepresentation
) -> SimilarityBreakdown:
    """Scalar-loop evaluation of the masked similarity, for tests only.

    No matrix shortcuts: every dot product is an explicit loop over
    vector entries, every mask check is explicit.
    """
    M = q.num_modalities
    d = q.dim

    sp_sum = 0.0
    joint = 0
    for m in range(M):
        if q.mask[m] == 1 and g.mask[m] == 1:
            dot = 0.0
            for k in range(d):
                dot += float(q.slots[m][k]) * float(g.slots[m][k])
            sp_sum += dot
            joint += 1
    q_sp_count = 0
    g_sp_count = 0
    for m in range(M):
        if q.mask[m] == 1:
            q_sp_count += 1
        if g.mask[m] == 1:
            g_sp_count += 1
    sp = sp_sum / (q_sp_count * g_sp_count)

    sh_sum = 0.0
    pair_count = 0
    for i in range(M):
        for j in range(M):
            if q.mask[M + i] == 1 and g.mask[M + j] == 1:
                dot = 0.0
                for k in range(d):
                    dot += float(q.slots[M + i][k]) * float(g.slots[M + j][k])
                sh_sum += dot
                pair_count += 1
    sh = sh_sum / pair_count
    return SimilarityBreakdown(sp, sh, (sp + sh) / 2.0, joint, pair_count)
