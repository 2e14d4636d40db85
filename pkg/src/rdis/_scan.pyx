# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled directional GRU scan.

Drop-in replacement for :mod:`rdis._scan_py`; see that module for the
recurrence.  Buffers are kept time-major so every per-step slice is one
contiguous block.  Matrix products go through BLAS ``dgemm``, the gate
nonlinearities through the vectorizable loops in ``_gates.h``, and the GIL is
released for the whole time loop.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef extern from "_gates.h" nogil:
    void rdis_gates_zr(int B, int H, const double* a, const double* b,
                       const double* h, double* z, double* r, double* rh)
    void rdis_gates_c(int B, int H, const double* a, const double* b,
                      const double* z, const double* h, double* c,
                      double* hnext)
    void rdis_back_zc(int B, int H, const double* dh, const double* hp,
                      const double* z, const double* c, double* da,
                      double* dhp)
    void rdis_back_r(int B, int H, const double* drh, const double* hp,
                     const double* r, const double* gh, double* da,
                     double* rh, double* dhp)
    void rdis_head_fill(int B, int H, int D, int fill, const double* h,
                        const double* WoT, const double* bo, const double* x,
                        const double* m, const double* W, double* y,
                        double* u, double* a)
    void rdis_colsum(int n, int k, const double* a, double* out)
    void rdis_back_head(int B, int H, int D, int fill, const double* da,
                        const double* W, const double* gy, const double* m,
                        const double* WoT, double* dy, double* dhp)


cdef inline void gemm(bint ta, bint tb, int M, int N, int K, double alpha,
                      double* A, int lda, double* B, int ldb, double beta,
                      double* C, int ldc) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C, via the transposed
    # column-major product C^T = op(B)^T @ op(A)^T
    cdef char tra = b'T' if tb else b'N'
    cdef char trb = b'T' if ta else b'N'
    dgemm(&tra, &trb, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def _time_major(a):
    return np.ascontiguousarray(np.transpose(a, (1, 0, 2)), dtype=np.float64)


def scan_forward(x, m, W, U, b, Wo, bo, fill=True):
    cdef int B = x.shape[0], T = x.shape[1], D = x.shape[2]
    cdef int H = U.shape[0]
    cdef int H3 = 3 * H, H2 = 2 * H
    cdef bint do_fill = bool(fill)

    ms_arr = _time_major(m)
    cdef double[:, :, ::1] xs = _time_major(x)
    cdef double[:, :, ::1] ms = ms_arr
    W_arr = np.ascontiguousarray(W, dtype=np.float64)
    U_arr = np.ascontiguousarray(U, dtype=np.float64)
    Wo_arr = np.ascontiguousarray(Wo, dtype=np.float64)
    cdef double[:, ::1] Wv = W_arr
    cdef double[:, ::1] Uv = U_arr
    cdef double[:, ::1] WoTv = np.ascontiguousarray(Wo_arr.T)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] bov = np.ascontiguousarray(bo, dtype=np.float64)

    hs_arr = np.zeros((T + 1, B, H))
    y_arr = np.empty((T, B, D))
    u_arr = np.empty((T, B, D))
    z_arr = np.empty((T, B, H))
    r_arr = np.empty((T, B, H))
    c_arr = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, ::1] u = u_arr
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] c = c_arr
    cdef double[:, ::1] a = np.empty((B, H3))
    cdef double[:, ::1] rh = np.empty((B, H))

    cdef int t

    with nogil:
        for t in range(T):
            rdis_head_fill(B, H, D, do_fill, &hs[t, 0, 0], &WoTv[0, 0], &bov[0],
                           &xs[t, 0, 0], &ms[t, 0, 0], &Wv[0, 0], &y[t, 0, 0],
                           &u[t, 0, 0], &a[0, 0])
            gemm(False, False, B, H2, H, 1.0, &hs[t, 0, 0], H, &Uv[0, 0], H3,
                 1.0, &a[0, 0], H3)
            rdis_gates_zr(B, H, &a[0, 0], &bv[0], &hs[t, 0, 0], &z[t, 0, 0],
                          &r[t, 0, 0], &rh[0, 0])
            gemm(False, False, B, H, H, 1.0, &rh[0, 0], H, &Uv[0, H2], H3,
                 1.0, &a[0, H2], H3)
            rdis_gates_c(B, H, &a[0, 0], &bv[0], &z[t, 0, 0], &hs[t, 0, 0],
                         &c[t, 0, 0], &hs[t + 1, 0, 0])

    hprev = np.ascontiguousarray(np.transpose(hs_arr[:T], (1, 0, 2)))
    yhat = np.ascontiguousarray(np.transpose(y_arr, (1, 0, 2)))
    cache = (ms_arr, W_arr, U_arr, Wo_arr, hs_arr, u_arr, z_arr, r_arr, c_arr,
             do_fill)
    return hprev, yhat, cache


def scan_backward(cache, d_hprev, d_yhat):
    ms_arr, W_arr, U_arr, Wo_arr, hs_arr, u_arr, z_arr, r_arr, c_arr, fill = cache
    cdef bint do_fill = fill
    cdef int T = u_arr.shape[0], B = u_arr.shape[1], D = u_arr.shape[2]
    cdef int H = U_arr.shape[0]
    cdef int H3 = 3 * H, H2 = 2 * H

    cdef double[:, :, ::1] ms = ms_arr
    cdef double[:, ::1] Wv = W_arr
    cdef double[:, ::1] Uv = U_arr
    cdef double[:, ::1] WoTv = np.ascontiguousarray(Wo_arr.T)
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, :, ::1] r = r_arr
    cdef double[:, :, ::1] c = c_arr
    cdef double[:, :, ::1] gh = _time_major(d_hprev)
    cdef double[:, :, ::1] gy = _time_major(d_yhat)

    # per-step scratch: nothing below needs a step's gate gradients once
    # that step's parameter contributions are added
    cdef double[:, ::1] da = np.empty((B, H3))
    cdef double[:, ::1] rh = np.empty((B, H))
    cdef double[:, ::1] dy = np.empty((B, D))
    # two carry buffers swapped each step
    cdef double[:, :, ::1] carry = np.zeros((2, B, H))
    cdef double[:, ::1] drh = np.empty((B, H))
    cdef double[:, :, ::1] u = u_arr

    # parameter gradients accumulate step by step while the slices are hot
    dW_arr = np.zeros((D, H3))
    dU_arr = np.zeros((H, H3))
    dWo_arr = np.zeros((H, D))
    db_arr = np.zeros(H3)
    dbo_arr = np.zeros(D)
    cdef double[:, ::1] dW = dW_arr
    cdef double[:, ::1] dU = dU_arr
    cdef double[:, ::1] dWo = dWo_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dbo = dbo_arr

    cdef int t, cur = 0, nxt = 1

    with nogil:
        for t in range(T - 1, -1, -1):
            rdis_back_zc(B, H, &carry[cur, 0, 0], &hs[t, 0, 0], &z[t, 0, 0],
                         &c[t, 0, 0], &da[0, 0], &carry[nxt, 0, 0])
            gemm(False, True, B, H, H, 1.0, &da[0, H2], H3, &Uv[0, H2], H3,
                 0.0, &drh[0, 0], H)
            rdis_back_r(B, H, &drh[0, 0], &hs[t, 0, 0], &r[t, 0, 0],
                        &gh[t, 0, 0], &da[0, 0], &rh[0, 0],
                        &carry[nxt, 0, 0])
            gemm(False, True, B, H, H2, 1.0, &da[0, 0], H3, &Uv[0, 0], H3,
                 1.0, &carry[nxt, 0, 0], H)
            rdis_back_head(B, H, D, do_fill, &da[0, 0], &Wv[0, 0],
                           &gy[t, 0, 0], &ms[t, 0, 0], &WoTv[0, 0], &dy[0, 0],
                           &carry[nxt, 0, 0])
            gemm(True, False, D, H3, B, 1.0, &u[t, 0, 0], D, &da[0, 0], H3,
                 1.0, &dW[0, 0], H3)
            gemm(True, False, H, H2, B, 1.0, &hs[t, 0, 0], H, &da[0, 0], H3,
                 1.0, &dU[0, 0], H3)
            gemm(True, False, H, H, B, 1.0, &rh[0, 0], H, &da[0, H2], H3,
                 1.0, &dU[0, H2], H3)
            gemm(True, False, H, D, B, 1.0, &hs[t, 0, 0], H, &dy[0, 0], D,
                 1.0, &dWo[0, 0], D)
            rdis_colsum(B, H3, &da[0, 0], &db[0])
            rdis_colsum(B, D, &dy[0, 0], &dbo[0])
            cur, nxt = nxt, cur
    return dW_arr, dU_arr, db_arr, dWo_arr, dbo_arr
