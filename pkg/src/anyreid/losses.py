"""Metric-learning losses with analytic gradients.

Four terms over a PK-sampled training batch:

* orthogonality loss: squared error between the pairwise slot-similarity
  matrix and the block target (identity over specifics, ones over
  shareds, zeros across), masked by the availability pair mask;
* knowledge discrepancy loss: per-anchor ratios that push the combined
  specific+shared feature to dominate either component alone, with the
  single-component branches detached from the gradient;
* batch-hard triplet loss on the full concatenated slot vector;
* label-smoothing cross-entropy with one linear classifier per modality
  on the [specific, shared] concatenation (or one shared classifier).

The weighted combination is w1 * orthogonality + w2 * discrepancy
(defaults 1.5 and 5.25), and the total objective adds cross-entropy and
triplet on top.

Graph-level functions (``*_graph``) operate on autodiff tensors and are
reused by the trainer; the module-level operations take plain
representations, build a small graph, and hand back value plus gradient
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .representation import LabeledSample

DEFAULT_W1 = 1.5
DEFAULT_W2 = 5.25
DEFAULT_MARGIN = 0.3
DEFAULT_CE_EPSILON = 0.1

RATIO_EPS = 1e-12
_DIST_GUARD = 1e-24  # keeps sqrt differentiable at coincident features


class LossError(ValueError):
    pass


def ideal_target_matrix(num_modalities: int = 3) -> np.ndarray:
    """Block target: identity over specifics, ones over shareds, zeros across."""
    M = num_modalities
    target = np.zeros((2 * M, 2 * M))
    target[:M, :M] = np.eye(M)
    target[M:, M:] = 1.0
    return target


def availability_pair_mask(mask: np.ndarray) -> np.ndarray:
    """Outer product of the 2M availability mask with itself."""
    mask = np.asarray(mask, dtype=np.float64)
    return np.outer(mask, mask)


@dataclass(frozen=True)
class BatchSpec:
    """P identities x K instances, all with full modality availability."""

    P: int
    K: int
    samples: list[LabeledSample]

    def __post_init__(self):
        if len(self.samples) != self.P * self.K:
            raise LossError("batch size must equal P * K")
        ids, counts = np.unique(self.identities, return_counts=True)
        if len(ids) != self.P or not np.all(counts == self.K):
            raise LossError("each identity must appear exactly K times")
        for sample in self.samples:
            if not sample.representation.mask.all():
                raise LossError("training batches require full modality availability")
        dims = {s.representation.dim for s in self.samples}
        if len(dims) != 1:
            raise LossError("inconsistent slot dimensions in batch")

    @property
    def identities(self) -> np.ndarray:
        return np.array([s.identity for s in self.samples])

    def slots(self) -> np.ndarray:
        return np.stack([s.representation.slots for s in self.samples])

    def positives(self, anchor: int) -> np.ndarray:
        ids = self.identities
        idx = np.flatnonzero(ids == ids[anchor])
        return idx[idx != anchor]

    def negatives(self, anchor: int) -> np.ndarray:
        return np.flatnonzero(self.identities != self.identities[anchor])


@dataclass
class LossReport:
    l_ce: float
    l_tri: float
    l_rol: float
    l_kdl: float
    l_mml: float
    l_total: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        values = [self.l_ce, self.l_tri, self.l_rol, self.l_kdl, self.l_mml, self.l_total]
        if not np.isfinite(values).all():
            raise LossError("non-finite loss value")


# ---------------------------------------------------------------------------
# graph-level building blocks
# ---------------------------------------------------------------------------


def masked_normalize_graph(slots: Tensor, mask: np.ndarray) -> Tensor:
    """Unit-normalize present slots in-graph; absent slots pass through."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    sq = (slots * slots).sum(axis=-1, keepdims=True)
    norm = (sq + 1e-30).sqrt()
    safe = norm * m + (1.0 - m)
    return slots / safe


def rol_graph(
    normed_slots: Tensor, target: np.ndarray, pair_mask: np.ndarray
) -> Tensor:
    """Masked SSE between the slot Gram matrix and the target.

    Accepts (2M, d) for one sample or (B, 2M, d) for a batch; the batch
    form averages over samples.
    """
    gram = normed_slots @ normed_slots.transpose()
    diff = gram - Tensor(target)
    total = (diff * diff * Tensor(pair_mask)).sum()
    if normed_slots.ndim == 3:
        return total * (1.0 / normed_slots.shape[0])
    return total


def anchor_distances_graph(feats: Tensor, anchor: int) -> Tensor:
    """Euclidean distances from row `anchor` to every row of (B, F)."""
    diff = feats - feats[anchor]
    sq = (diff * diff).sum(axis=1)
    return (sq + _DIST_GUARD).sqrt()


def kdl_anchor_graph(
    comb: Tensor,
    spec: Tensor,
    shared: Tensor,
    anchor: int,
    pos_idx: np.ndarray,
    neg_idx: np.ndarray,
    frozen: tuple[float, float, float, float] | None = None,
) -> Tensor:
    """|D_p| + |D_n - 1| for one anchor.

    The single-component distances are detached: only the combined
    feature receives gradient from either ratio. ``frozen`` replaces the
    detached values with constants (far_spec, far_shared, near_spec,
    near_shared); finite-difference checks use it to probe the function
    the detached graph actually differentiates.
    """
    d_comb = anchor_distances_graph(comb, anchor)
    far_comb = d_comb[pos_idx].max()
    near_comb = d_comb[neg_idx].min()
    if frozen is None:
        d_spec = anchor_distances_graph(spec, anchor)
        d_shared = anchor_distances_graph(shared, anchor)
        far_spec = d_spec[pos_idx].max().detach()
        far_shared = d_shared[pos_idx].max().detach()
        near_spec = d_spec[neg_idx].min().detach()
        near_shared = d_shared[neg_idx].min().detach()
    else:
        far_spec, far_shared, near_spec, near_shared = (Tensor(v) for v in frozen)

    d_p = far_comb / (far_comb + far_spec + far_shared + RATIO_EPS)
    d_n = near_comb / (near_comb + near_spec + near_shared + RATIO_EPS)
    return d_p.abs() + (d_n - 1.0).abs()


def kdl_frozen_branches(
    slots: np.ndarray,
    num_modalities: int,
    classes: np.ndarray,
) -> dict[int, tuple[float, float, float, float]]:
    """Detached-branch values per anchor, for frozen finite differences."""
    M = num_modalities
    B = slots.shape[0]
    spec = slots[:, :M, :].reshape(B, -1)
    shared = slots[:, M:, :].reshape(B, -1)
    classes = np.asarray(classes)
    out = {}
    for anchor in range(B):
        pos = np.flatnonzero(classes == classes[anchor])
        pos = pos[pos != anchor]
        neg = np.flatnonzero(classes != classes[anchor])
        if len(pos) == 0 or len(neg) == 0:
            continue
        d_spec = np.sqrt(((spec - spec[anchor]) ** 2).sum(axis=1) + _DIST_GUARD)
        d_shared = np.sqrt(((shared - shared[anchor]) ** 2).sum(axis=1) + _DIST_GUARD)
        out[anchor] = (
            float(d_spec[pos].max()),
            float(d_shared[pos].max()),
            float(d_spec[neg].min()),
            float(d_shared[neg].min()),
        )
    return out


def triplet_anchor_graph(
    comb: Tensor, anchor: int, pos_idx: np.ndarray, neg_idx: np.ndarray, margin: float
) -> Tensor:
    d = anchor_distances_graph(comb, anchor)
    return (d[pos_idx].max() - d[neg_idx].min() + margin).relu()


def smoothed_ce_graph(logits: Tensor, classes, num_classes: int, epsilon: float) -> Tensor:
    """Label-smoothing CE, averaged over the batch when logits is (B, C)."""
    lsm = logits.log_softmax(axis=-1)
    if logits.ndim == 1:
        q = np.full(num_classes, epsilon / num_classes)
        q[int(classes)] = 1.0 - epsilon + epsilon / num_classes
        return -(lsm * Tensor(q)).sum()
    batch = logits.shape[0]
    q = np.full((batch, num_classes), epsilon / num_classes)
    q[np.arange(batch), np.asarray(classes)] = 1.0 - epsilon + epsilon / num_classes
    return -(lsm * Tensor(q)).sum() * (1.0 / batch)


def split_features(slots: Tensor, num_modalities: int) -> tuple[Tensor, Tensor, Tensor]:
    """(combined, specific, shared) flat per-sample features from (B, 2M, d)."""
    B, two_m, d = slots.shape
    M = num_modalities
    comb = slots.reshape((B, two_m * d))
    spec = slots[:, :M, :].reshape((B, M * d))
    shared = slots[:, M:, :].reshape((B, M * d))
    return comb, spec, shared


def batch_loss_graph(
    raw_slots: Tensor,
    mask: np.ndarray,
    classes: np.ndarray,
    heads: Mapping[str, Tensor],
    modalities: Sequence[str],
    w1: float = DEFAULT_W1,
    w2: float = DEFAULT_W2,
    margin: float = DEFAULT_MARGIN,
    ce_epsilon: float = DEFAULT_CE_EPSILON,
) -> dict[str, Tensor]:
    """All loss terms for one batch, as graph nodes.

    ``raw_slots`` is (B, 2M, d) pre-normalization; slots are unit-normalized
    in-graph so every term's gradient flows through the normalization.
    ``heads`` maps "head.<modality>.weight"/".bias" (or "head.all.*" for a
    single shared classifier) to parameter tensors.
    """
    B, two_m, d = raw_slots.shape
    M = len(modalities)
    classes = np.asarray(classes)

    normed = masked_normalize_graph(raw_slots, mask)

    target = ideal_target_matrix(M)
    pair = np.einsum("bi,bj->bij", mask.astype(np.float64), mask.astype(np.float64))
    rol = rol_graph(normed, target, pair)

    comb, spec, shared = split_features(normed, M)
    kdl_terms: list[Tensor] = []
    tri_terms: list[Tensor] = []
    for anchor in range(B):
        pos = np.flatnonzero((classes == classes[anchor]))
        pos = pos[pos != anchor]
        neg = np.flatnonzero(classes != classes[anchor])
        if len(pos) == 0 or len(neg) == 0:
            continue
        kdl_terms.append(kdl_anchor_graph(comb, spec, shared, anchor, pos, neg))
        tri_terms.append(triplet_anchor_graph(comb, anchor, pos, neg, margin))
    if not kdl_terms:
        raise LossError("no anchor with both a positive and a negative")
    kdl = _mean(kdl_terms)
    tri = _mean(tri_terms)

    single = "head.all.weight" in heads
    num_classes = heads["head.all.weight" if single else f"head.{modalities[0]}.weight"].shape[0]
    ce_terms = []
    for i, name in enumerate(modalities):
        feats = concat_pair(normed[:, i, :], normed[:, M + i, :])
        key = "all" if single else name
        logits = feats @ heads[f"head.{key}.weight"].transpose() + heads[f"head.{key}.bias"]
        ce_terms.append(smoothed_ce_graph(logits, classes, num_classes, ce_epsilon))
    ce = _mean(ce_terms)

    mml = rol * w1 + kdl * w2
    total = ce + tri + mml
    return {"ce": ce, "tri": tri, "rol": rol, "kdl": kdl, "mml": mml, "total": total}


def concat_pair(a: Tensor, b: Tensor) -> Tensor:
    from .autodiff import concat

    return concat([a, b], axis=-1 if a.ndim == 1 else 1)


def _mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


# ---------------------------------------------------------------------------
# operations on plain representations
# ---------------------------------------------------------------------------


def rol_loss(
    rep,
    target: np.ndarray | None = None,
    pair_mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Orthogonality loss of one normalized representation.

    Returns (value, gradient w.r.t. the raw slot stack); the gradient is
    taken through the unit normalization.
    """
    if not rep.normalized:
        raise LossError("orthogonality loss requires a normalized representation")
    M = rep.num_modalities
    if target is None:
        target = ideal_target_matrix(M)
    if pair_mask is None:
        pair_mask = availability_pair_mask(rep.mask)
    target = np.asarray(target, dtype=np.float64)
    pair_mask = np.asarray(pair_mask, dtype=np.float64)
    if target.shape != (2 * M, 2 * M) or pair_mask.shape != (2 * M, 2 * M):
        raise LossError("target and pair mask must be (2M, 2M)")

    leaf = Tensor(rep.slots)
    normed = masked_normalize_graph(leaf, rep.mask)
    loss = rol_graph(normed, target, pair_mask)
    loss.backward()
    return loss.item(), leaf.grad


def _batch_features(batch: BatchSpec):
    slots = Tensor(batch.slots())
    M = batch.samples[0].representation.num_modalities
    return slots, split_features(slots, M)


def kdl_loss(batch: BatchSpec, anchor_index: int) -> tuple[float, np.ndarray]:
    """Knowledge discrepancy loss for one anchor.

    Returns (value, gradient w.r.t. every sample's slot stack, shape
    (B, 2M, d)). Slots are used as given; no normalization is applied.
    """
    pos = batch.positives(anchor_index)
    neg = batch.negatives(anchor_index)
    if len(pos) == 0 or len(neg) == 0:
        raise LossError("degenerate anchor")
    leaf, (comb, spec, shared) = _batch_features(batch)
    loss = kdl_anchor_graph(comb, spec, shared, anchor_index, pos, neg)
    loss.backward()
    return loss.item(), leaf.grad


def triplet_loss(batch: BatchSpec, margin: float = DEFAULT_MARGIN) -> tuple[float, np.ndarray]:
    """Batch-hard triplet loss, mean over anchors with a positive and negative."""
    leaf, (comb, _, _) = _batch_features(batch)
    terms = []
    for anchor in range(len(batch.samples)):
        pos = batch.positives(anchor)
        neg = batch.negatives(anchor)
        if len(pos) == 0 or len(neg) == 0:
            continue
        terms.append(triplet_anchor_graph(comb, anchor, pos, neg, margin))
    if not terms:
        raise LossError("no anchor with both a positive and a negative")
    loss = _mean(terms)
    loss.backward()
    return loss.item(), leaf.grad


def label_smoothing_ce(
    logits_per_modality: Sequence[np.ndarray],
    identity: int,
    epsilon: float = DEFAULT_CE_EPSILON,
) -> tuple[float, list[np.ndarray]]:
    """Mean over modalities of smoothed CE on one sample's logits."""
    leaves = [Tensor(np.asarray(l, dtype=np.float64)) for l in logits_per_modality]
    num_classes = leaves[0].shape[-1]
    if not 0 <= identity < num_classes:
        raise LossError(f"identity {identity} out of range for {num_classes} classes")
    loss = _mean([smoothed_ce_graph(l, identity, num_classes, epsilon) for l in leaves])
    loss.backward()
    return loss.item(), [l.grad for l in leaves]


@dataclass(frozen=True)
class MMLFragment:
    l_rol: float
    l_kdl: float
    l_mml: float


def mml_loss(batch: BatchSpec, w1: float = DEFAULT_W1, w2: float = DEFAULT_W2) -> MMLFragment:
    """Weighted combination: ROL averaged over samples, KDL over anchors."""
    if w1 < 0 or w2 < 0:
        raise LossError("loss weights must be non-negative")
    rol_values = [rol_loss(s.representation)[0] for s in batch.samples]
    kdl_values = []
    for anchor in range(len(batch.samples)):
        if len(batch.positives(anchor)) and len(batch.negatives(anchor)):
            kdl_values.append(kdl_loss(batch, anchor)[0])
    if not kdl_values:
        raise LossError("no anchor with both a positive and a negative")
    l_rol = float(np.mean(rol_values))
    l_kdl = float(np.mean(kdl_values))
    return MMLFragment(l_rol, l_kdl, w1 * l_rol + w2 * l_kdl)


def total_loss(
    batch: BatchSpec,
    heads: Mapping[str, np.ndarray],
    w1: float = DEFAULT_W1,
    w2: float = DEFAULT_W2,
    margin: float = DEFAULT_MARGIN,
    ce_epsilon: float = DEFAULT_CE_EPSILON,
) -> LossReport:
    """All terms plus gradients for a batch of normalized representations.

    Sample identities must already be class indices for the supplied
    classifier heads. Gradients are keyed "slots" for the stacked input
    (B, 2M, d) and by head parameter name.
    """
    reps = [s.representation for s in batch.samples]
    if not all(r.normalized for r in reps):
        raise LossError("total_loss requires normalized representations")
    modalities = reps[0].modalities
    head_tensors = {k: Tensor(v) for k, v in heads.items()}
    leaf = Tensor(batch.slots())
    mask = np.stack([r.mask for r in reps])
    terms = batch_loss_graph(
        leaf,
        mask,
        batch.identities,
        head_tensors,
        modalities,
        w1=w1,
        w2=w2,
        margin=margin,
        ce_epsilon=ce_epsilon,
    )
    terms["total"].backward()
    gradients = {"slots": leaf.grad}
    for key, tensor in head_tensors.items():
        gradients[key] = (
            tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        )
    return LossReport(
        l_ce=terms["ce"].item(),
        l_tri=terms["tri"].item(),
        l_rol=terms["rol"].item(),
        l_kdl=terms["kdl"].item(),
        l_mml=terms["mml"].item(),
        l_total=terms["total"].item(),
        gradients=gradients,
    )
