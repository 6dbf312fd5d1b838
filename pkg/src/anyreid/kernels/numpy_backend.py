"""Vectorized numpy fallback for the masked-similarity kernels."""

from __future__ import annotations

import numpy as np


def masked_similarity(q_slots, q_mask, g_slots, g_mask):
    """Same contract as the compiled kernel; einsum instead of loops."""
    M = q_slots.shape[1] // 2
    qm = q_mask.astype(np.float64)
    gm = g_mask.astype(np.float64)

    q_sp = q_slots[:, :M, :] * qm[:, :M, None]
    g_sp = g_slots[:, :M, :] * gm[:, :M, None]
    q_sh = q_slots[:, M:, :] * qm[:, M:, None]
    g_sh = g_slots[:, M:, :] * gm[:, M:, None]

    sp_num = np.einsum("qmd,gmd->qg", q_sp, g_sp)
    sp_den = np.outer(qm[:, :M].sum(axis=1), gm[:, :M].sum(axis=1))
    sp = sp_num / sp_den

    sh_num = np.einsum("qid,gjd->qg", q_sh, g_sh)
    sh_counts_q = qm[:, M:].sum(axis=1)
    sh_counts_g = gm[:, M:].sum(axis=1)
    sh_den = np.outer(sh_counts_q, sh_counts_g)
    sh = sh_num / sh_den

    sp_pairs = np.einsum("qm,gm->qg", qm[:, :M], gm[:, :M]).astype(np.int64)
    sh_pairs = sh_den.astype(np.int64)
    return sp, sh, sp_pairs, sh_pairs
