# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled neighbour-attention kernels.

Same contracts as the numpy versions in ``kgad.kernels``; the fused loops avoid
materialising the ``(B, m, D)`` neighbour gather.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def attend_forward(const double[:, ::1] anchor, const double[:, ::1] table,
                   const cnp.int64_t[:, ::1] idx):
    cdef Py_ssize_t B = anchor.shape[0], D = anchor.shape[1], M = idx.shape[1]
    cdef Py_ssize_t b, j, d, row
    cdef double s, smax, total, a
    z_arr = np.zeros((B, D), dtype=np.float64)
    alpha_arr = np.empty((B, M), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] alpha = alpha_arr
    with nogil:
        for b in range(B):
            smax = -1e308
            for j in range(M):
                row = idx[b, j]
                s = 0.0
                for d in range(D):
                    s = s + anchor[b, d] * table[row, d]
                alpha[b, j] = s
                if s > smax:
                    smax = s
            total = 0.0
            for j in range(M):
                a = exp(alpha[b, j] - smax)
                alpha[b, j] = a
                total = total + a
            for j in range(M):
                a = alpha[b, j] / total
                alpha[b, j] = a
                row = idx[b, j]
                for d in range(D):
                    z[b, d] = z[b, d] + a * table[row, d]
    return z_arr, alpha_arr


def attend_backward(const double[:, ::1] anchor, const double[:, ::1] table,
                    const cnp.int64_t[:, ::1] idx, const double[:, ::1] alpha,
                    const double[:, ::1] z, const double[:, ::1] gz, bint need_table_grad):
    cdef Py_ssize_t B = anchor.shape[0], D = anchor.shape[1], M = idx.shape[1]
    cdef Py_ssize_t N = table.shape[0]
    cdef Py_ssize_t b, j, d, row
    cdef double gzz, gq, gs, a
    g_anchor_arr = np.zeros((B, D), dtype=np.float64)
    cdef double[:, ::1] g_anchor = g_anchor_arr
    cdef double[:, ::1] g_table
    if need_table_grad:
        g_table_arr = np.zeros((N, D), dtype=np.float64)
        g_table = g_table_arr
    else:
        g_table_arr = None
    with nogil:
        for b in range(B):
            gzz = 0.0
            for d in range(D):
                gzz = gzz + gz[b, d] * z[b, d]
            for j in range(M):
                row = idx[b, j]
                a = alpha[b, j]
                gq = 0.0
                for d in range(D):
                    gq = gq + gz[b, d] * table[row, d]
                gs = a * (gq - gzz)
                for d in range(D):
                    g_anchor[b, d] = g_anchor[b, d] + gs * table[row, d]
                if need_table_grad:
                    for d in range(D):
                        g_table[row, d] = g_table[row, d] + a * gz[b, d] + gs * anchor[b, d]
    return g_anchor_arr, g_table_arr


def scatter_add_rows(double[:, ::1] out, const cnp.int64_t[::1] idx, const double[:, ::1] src):
    cdef Py_ssize_t K = idx.shape[0], D = out.shape[1]
    cdef Py_ssize_t k, d, row
    with nogil:
        for k in range(K):
            row = idx[k]
            for d in range(D):
                out[row, d] = out[row, d] + src[k, d]


# -- grouped attention over a flat plan ------------------------------------------
#
# Row-major products go through column-major dgemm by computing the transpose:
# C = op(A) @ op(B) (row-major) is C^T = op(B)^T @ op(A)^T (column-major).

from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm_rm(bint ta, bint tb, int M, int N, int K, double alpha,
                   const double* A, int lda, const double* B, int ldb,
                   double beta, double* C, int ldc) noexcept nogil:
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


def grouped_forward(const double[:, ::1] anchor, const double[:, ::1] table,
                    const cnp.int64_t[::1] rows, const cnp.int64_t[::1] row_ptr,
                    const cnp.int64_t[::1] cand, const cnp.int64_t[::1] cand_ptr,
                    const double[::1] counts, const cnp.int64_t[::1] cnt_ptr,
                    Py_ssize_t max_rows, Py_ssize_t max_cand):
    cdef Py_ssize_t B = anchor.shape[0], D = anchor.shape[1], G = row_ptr.shape[0] - 1
    cdef Py_ssize_t g, i, j, d, nr, nc, off
    cdef double smax, total, s
    z_arr = np.empty((B, D), dtype=np.float64)
    w_arr = np.empty(counts.shape[0], dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef double[::1] w = w_arr
    buf_a = np.empty(max_rows * D)
    buf_n = np.empty(max_cand * D)
    buf_z = np.empty(max_rows * D)
    cdef double[::1] A = buf_a, Nb = buf_n, Z = buf_z
    with nogil:
        for g in range(G):
            nr = row_ptr[g + 1] - row_ptr[g]
            nc = cand_ptr[g + 1] - cand_ptr[g]
            off = cnt_ptr[g]
            for i in range(nr):
                for d in range(D):
                    A[i * D + d] = anchor[rows[row_ptr[g] + i], d]
            for j in range(nc):
                for d in range(D):
                    Nb[j * D + d] = table[cand[cand_ptr[g] + j], d]
            # scores S = A @ Nb^T into w
            _gemm_rm(False, True, <int>nr, <int>nc, <int>D, 1.0, &A[0], <int>D,
                     &Nb[0], <int>D, 0.0, &w[off], <int>nc)
            for i in range(nr):
                smax = -1e308
                for j in range(nc):
                    if counts[off + i * nc + j] > 0 and w[off + i * nc + j] > smax:
                        smax = w[off + i * nc + j]
                total = 0.0
                for j in range(nc):
                    if counts[off + i * nc + j] > 0:
                        s = counts[off + i * nc + j] * exp(w[off + i * nc + j] - smax)
                    else:
                        s = 0.0
                    w[off + i * nc + j] = s
                    total = total + s
                for j in range(nc):
                    w[off + i * nc + j] = w[off + i * nc + j] / total
            _gemm_rm(False, False, <int>nr, <int>D, <int>nc, 1.0, &w[off], <int>nc,
                     &Nb[0], <int>D, 0.0, &Z[0], <int>D)
            for i in range(nr):
                for d in range(D):
                    z[rows[row_ptr[g] + i], d] = Z[i * D + d]
    return z_arr, w_arr


def grouped_backward(const double[:, ::1] anchor, const double[:, ::1] table,
                     const cnp.int64_t[::1] rows, const cnp.int64_t[::1] row_ptr,
                     const cnp.int64_t[::1] cand, const cnp.int64_t[::1] cand_ptr,
                     const double[::1] w, const cnp.int64_t[::1] cnt_ptr,
                     const double[:, ::1] z, const double[:, ::1] gz,
                     Py_ssize_t max_rows, Py_ssize_t max_cand, bint need_table_grad):
    cdef Py_ssize_t B = anchor.shape[0], D = anchor.shape[1], G = row_ptr.shape[0] - 1
    cdef Py_ssize_t N = table.shape[0]
    cdef Py_ssize_t g, i, j, d, nr, nc, off, r
    cdef double gzz
    g_anchor_arr = np.empty((B, D), dtype=np.float64)
    cdef double[:, ::1] g_anchor = g_anchor_arr
    cdef double[:, ::1] g_table
    if need_table_grad:
        g_table_arr = np.zeros((N, D), dtype=np.float64)
        g_table = g_table_arr
    else:
        g_table_arr = None
    buf_a = np.empty(max_rows * D)
    buf_g = np.empty(max_rows * D)
    buf_n = np.empty(max_cand * D)
    buf_s = np.empty(max_rows * max_cand)
    buf_o = np.empty(max(max_rows, max_cand) * D)
    cdef double[::1] A = buf_a, Gz = buf_g, Nb = buf_n, S = buf_s, O = buf_o
    with nogil:
        for g in range(G):
            nr = row_ptr[g + 1] - row_ptr[g]
            nc = cand_ptr[g + 1] - cand_ptr[g]
            off = cnt_ptr[g]
            for i in range(nr):
                r = rows[row_ptr[g] + i]
                for d in range(D):
                    A[i * D + d] = anchor[r, d]
                    Gz[i * D + d] = gz[r, d]
            for j in range(nc):
                for d in range(D):
                    Nb[j * D + d] = table[cand[cand_ptr[g] + j], d]
            _gemm_rm(False, True, <int>nr, <int>nc, <int>D, 1.0, &Gz[0], <int>D,
                     &Nb[0], <int>D, 0.0, &S[0], <int>nc)
            for i in range(nr):
                r = rows[row_ptr[g] + i]
                gzz = 0.0
                for d in range(D):
                    gzz = gzz + gz[r, d] * z[r, d]
                for j in range(nc):
                    S[i * nc + j] = w[off + i * nc + j] * (S[i * nc + j] - gzz)
            _gemm_rm(False, False, <int>nr, <int>D, <int>nc, 1.0, &S[0], <int>nc,
                     &Nb[0], <int>D, 0.0, &O[0], <int>D)
            for i in range(nr):
                r = rows[row_ptr[g] + i]
                for d in range(D):
                    g_anchor[r, d] = O[i * D + d]
            if need_table_grad:
                _gemm_rm(True, False, <int>nc, <int>D, <int>nr, 1.0, &w[off], <int>nc,
                         &Gz[0], <int>D, 0.0, &O[0], <int>D)
                _gemm_rm(True, False, <int>nc, <int>D, <int>nr, 1.0, &S[0], <int>nc,
                         &A[0], <int>D, 1.0, &O[0], <int>D)
                for j in range(nc):
                    r = cand[cand_ptr[g] + j]
                    for d in range(D):
                        g_table[r, d] = g_table[r, d] + O[j * D + d]
    return g_anchor_arr, g_table_arr
