# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluator for batches of candidate change planes.

Mirrors :mod:`funcplane._profile_ref`; see :mod:`funcplane.profile_kernel`
for the shared contract.  The per-eigenvalue systems are tiny (p + d square),
so they are solved with an unblocked in-place Cholesky instead of BLAS.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erfc, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865475244
cdef double DEGENERATE_SD = 1e-12


def eval_candidates(double[:, ::1] idx, double h,
                    double[:, ::1] X, double[:, ::1] Xt,
                    double[:, ::1] Yh, double[:, ::1] Rx,
                    double[:, ::1] Sxx, double[::1] mu,
                    double lam_nm, double const_term, double beta_only_loss):
    cdef Py_ssize_t n_cand = idx.shape[0]
    cdef Py_ssize_t n = idx.shape[1]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t d = Xt.shape[1]
    cdef Py_ssize_t n_grid = Yh.shape[1]
    cdef Py_ssize_t pd = p + d

    out = np.empty(n_cand)
    cdef double[::1] losses = out
    g_buf = np.empty(n)
    cdef double[::1] g = g_buf
    S_buf = np.empty((pd, pd))
    cdef double[:, ::1] S = S_buf
    R_buf = np.empty((pd, n_grid))
    cdef double[:, ::1] R = R_buf
    A_buf = np.empty((pd, pd))
    cdef double[:, ::1] A = A_buf
    u_buf = np.empty(pd)
    cdef double[::1] u = u_buf

    cdef Py_ssize_t c, i, j, k, l, m
    cdef double gi, gi2, acc, mean, var, quad, un2, mum, s

    for c in range(n_cand):
        mean = 0.0
        for i in range(n):
            gi = 0.5 * erfc(-(idx[c, i] / h) * INV_SQRT2)
            g[i] = gi
            mean += gi
        mean /= n
        var = 0.0
        for i in range(n):
            var += (g[i] - mean) * (g[i] - mean)
        if sqrt(var / n) < DEGENERATE_SD:
            losses[c] = beta_only_loss
            continue

        for j in range(pd):
            for k in range(pd):
                S[j, k] = Sxx[j, k] if (j < p and k < p) else 0.0
        for j in range(pd):
            for m in range(n_grid):
                R[j, m] = Rx[j, m] if j < p else 0.0
        for i in range(n):
            gi = g[i]
            gi2 = gi * gi
            for l in range(d):
                acc = gi * Xt[i, l]
                for j in range(p):
                    S[j, p + l] += X[i, j] * acc
                for k in range(d):
                    S[p + l, p + k] += gi2 * Xt[i, l] * Xt[i, k]
                for m in range(n_grid):
                    R[p + l, m] += acc * Yh[i, m]
        for l in range(d):
            for j in range(p):
                S[p + l, j] = S[j, p + l]

        quad = 0.0
        un2 = 0.0
        for m in range(n_grid):
            mum = mu[m]
            for j in range(pd):
                for k in range(j + 1):
                    A[j, k] = mum * S[j, k]
                A[j, j] += lam_nm
            # in-place lower Cholesky of A
            for j in range(pd):
                s = A[j, j]
                for k in range(j):
                    s -= A[j, k] * A[j, k]
                if s <= 0.0:
                    s = lam_nm * 1e-12
                A[j, j] = sqrt(s)
                for i in range(j + 1, pd):
                    s = A[i, j]
                    for k in range(j):
                        s -= A[i, k] * A[j, k]
                    A[i, j] = s / A[j, j]
            # solve A A^T u = R[:, m]
            for j in range(pd):
                s = R[j, m]
                for k in range(j):
                    s -= A[j, k] * u[k]
                u[j] = s / A[j, j]
            for j in range(pd - 1, -1, -1):
                s = u[j]
                for k in range(j + 1, pd):
                    s -= A[k, j] * u[k]
                u[j] = s / A[j, j]
            for j in range(pd):
                quad += u[j] * R[j, m]
                un2 += u[j] * u[j]

        losses[c] = (const_term - quad - lam_nm * un2) / (2.0 * n * n_grid)

    return out
