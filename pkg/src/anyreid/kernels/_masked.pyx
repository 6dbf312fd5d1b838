# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled masked-similarity kernels.

Scalar loops with a fixed summation order: for one (query, gallery) pair
the result is bit-identical no matter how callers batch or shard the
inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def masked_similarity(
    const double[:, :, ::1] q_slots,
    const unsigned char[:, ::1] q_mask,
    const double[:, :, ::1] g_slots,
    const unsigned char[:, ::1] g_mask,
):
    """Pairwise specific/shared similarity components for Q x G pairs.

    Slot layout is [specific_0..specific_{M-1}, shared_0..shared_{M-1}];
    masked-out slots must be zero-filled. Returns (sp, sh, sp_pairs,
    sh_pairs) arrays of shape (Q, G).
    """
    cdef Py_ssize_t Q = q_slots.shape[0]
    cdef Py_ssize_t G = g_slots.shape[0]
    cdef Py_ssize_t two_m = q_slots.shape[1]
    cdef Py_ssize_t M = two_m // 2
    cdef Py_ssize_t d = q_slots.shape[2]

    sp = np.zeros((Q, G), dtype=np.float64)
    sh = np.zeros((Q, G), dtype=np.float64)
    sp_pairs = np.zeros((Q, G), dtype=np.int64)
    sh_pairs = np.zeros((Q, G), dtype=np.int64)

    cdef double[:, ::1] sp_v = sp
    cdef double[:, ::1] sh_v = sh
    cdef long long[:, ::1] spp_v = sp_pairs
    cdef long long[:, ::1] shp_v = sh_pairs

    cdef Py_ssize_t q, g, m, i, j, k
    cdef double sp_num, sh_num, dot
    cdef long long q_sp_count, g_sp_count, q_sh_count, g_sh_count, joint

    for q in range(Q):
        q_sp_count = 0
        q_sh_count = 0
        for m in range(M):
            if q_mask[q, m]:
                q_sp_count += 1
            if q_mask[q, M + m]:
                q_sh_count += 1
        for g in range(G):
            g_sp_count = 0
            g_sh_count = 0
            for m in range(M):
                if g_mask[g, m]:
                    g_sp_count += 1
                if g_mask[g, M + m]:
                    g_sh_count += 1

            sp_num = 0.0
            joint = 0
            for m in range(M):
                if q_mask[q, m] and g_mask[g, m]:
                    dot = 0.0
                    for k in range(d):
                        dot += q_slots[q, m, k] * g_slots[g, m, k]
                    sp_num += dot
                    joint += 1
            sp_v[q, g] = sp_num / (q_sp_count * g_sp_count)
            spp_v[q, g] = joint

            sh_num = 0.0
            for i in range(M):
                if not q_mask[q, M + i]:
                    continue
                for j in range(M):
                    if not g_mask[g, M + j]:
                        continue
                    dot = 0.0
                    for k in range(d):
                        dot += q_slots[q, M + i, k] * g_slots[g, M + j, k]
                    sh_num += dot
            sh_v[q, g] = sh_num / (q_sh_count * g_sh_count)
            shp_v[q, g] = q_sh_count * g_sh_count

    return sp, sh, sp_pairs, sh_pairs
