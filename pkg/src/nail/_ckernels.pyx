# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused loops for the masked L2,1 term and the focal label term.

Both kernels return per-row values so callers can run row-separable steps.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, pow, fabs

cnp.import_array()


def l21_rows(const double[:, ::1] R, const unsigned char[:, ::1] O, double eps):
    cdef Py_ssize_t n = R.shape[0], d = R.shape[1], i, j
    cdef double s, r, den
    norms_arr = np.empty(n, dtype=np.float64)
    smooth_arr = np.empty(n, dtype=np.float64)
    G_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[::1] norms = norms_arr, smooth = smooth_arr
    cdef double[:, ::1] G = G_arr
    for i in range(n):
        s = 0.0
        for j in range(d):
            if O[i, j]:
                r = R[i, j]
                s += r * r
        norms[i] = sqrt(s)
        den = sqrt(s + eps * eps)
        smooth[i] = den
        if den > 0.0:
            for j in range(d):
                if O[i, j]:
                    G[i, j] = R[i, j] / den
    return norms_arr, smooth_arr, G_arr


def focal_terms(const double[:, ::1] Z, const double[:, ::1] Y, const unsigned char[:, ::1] O,
                double gamma, double a, double eps_p):
    cdef Py_ssize_t n = Z.shape[0], l = Z.shape[1], i, j
    cdef double z, e, p, q, w, om, lq, omg, acc
    cdef int ig = <int>gamma, t
    cdef bint int_gamma = gamma == <double>ig and 0 <= ig <= 8
    rows_arr = np.zeros(n, dtype=np.float64)
    dZ_arr = np.zeros((n, l), dtype=np.float64)
    cdef double[::1] rows = rows_arr
    cdef double[:, ::1] dZ = dZ_arr
    for i in range(n):
        acc = 0.0
        for j in range(l):
            if not O[i, j]:
                continue
            z = Z[i, j]
            if z >= 0:
                p = 1.0 / (1.0 + exp(-z))
            else:
                e = exp(z)
                p = e / (1.0 + e)
            if p < eps_p:
                p = eps_p
            elif p > 1.0 - eps_p:
                p = 1.0 - eps_p
            if Y[i, j] == 1.0:
                q = p
                w = a
            else:
                q = 1.0 - p
                w = 1.0 - a
            om = 1.0 - q
            lq = log(q)
            if int_gamma:
                omg = 1.0
                for t in range(ig):
                    omg *= om
            else:
                omg = pow(om, gamma)
            acc += -w * omg * lq
            e = w * (gamma * omg * q * lq - omg * om)
            dZ[i, j] = e if Y[i, j] == 1.0 else -e
        rows[i] = acc
    return rows_arr, dZ_arr


cdef bint _chol_solve(double[:, ::1] G, double[::1] h, int* idx, int p,
                      double[:, ::1] L, double[::1] out) noexcept nogil:
    """Solve G[idx, idx] s = h[idx] by Cholesky; False if not positive definite."""
    cdef int i, j, t
    cdef double acc
    for i in range(p):
        for j in range(i + 1):
            acc = G[idx[i], idx[j]]
            for t in range(j):
                acc -= L[i, t] * L[j, t]
            if i == j:
                if acc <= 0.0:
                    return False
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    for i in range(p):
        acc = h[idx[i]]
        for t in range(i):
            acc -= L[i, t] * out[t]
        out[i] = acc / L[i, i]
    for i in range(p - 1, -1, -1):
        acc = out[i]
        for t in range(i + 1, p):
            acc -= L[t, i] * out[t]
        out[i] = acc / L[i, i]
    return True


def nnqp_batch(const double[:, :, ::1] G_in, const double[:, ::1] h_in, bint nonneg):
    """Minimise 0.5 x'Gx - h'x (optionally over x >= 0) for a batch of SPD problems."""
    cdef Py_ssize_t B = G_in.shape[0], k = G_in.shape[1], b, i, j
    x_arr = np.zeros((B, k), dtype=np.float64)
    cdef double[:, ::1] X = x_arr
    G_arr = np.empty((k, k), dtype=np.float64)
    L_arr = np.zeros((k, k), dtype=np.float64)
    h_arr = np.empty(k, dtype=np.float64)
    s_arr = np.empty(k, dtype=np.float64)
    w_arr = np.empty(k, dtype=np.float64)
    x_loc = np.empty(k, dtype=np.float64)
    idx_arr = np.empty(k, dtype=np.intc)
    pas_arr = np.zeros(k, dtype=np.intc)
    cdef double[:, ::1] G = G_arr, L = L_arr
    cdef double[::1] h = h_arr, s = s_arr, w = w_arr, x = x_loc
    cdef int[::1] idx = idx_arr, passive = pas_arr
    cdef int p, outer, inner, best, jmin, max_it = 3 * <int>k + 10, last
    cdef double tol, wmax, step, r, hmax
    for b in range(B):
        for i in range(k):
            h[i] = h_in[b, i]
            for j in range(k):
                G[i, j] = G_in[b, i, j]
        if not nonneg:
            for i in range(k):
                idx[i] = <int>i
            if _chol_solve(G, h, &idx[0], <int>k, L, s):
                for i in range(k):
                    X[b, i] = s[i]
            continue
        hmax = 0.0
        for i in range(k):
            x[i] = 0.0
            passive[i] = 0
            if fabs(h[i]) > hmax:
                hmax = fabs(h[i])
        tol = 1e-13 * (hmax + 1e-300)
        last = -1
        for outer in range(max_it):
            best = -1
            wmax = tol
            for i in range(k):
                r = h[i]
                for j in range(k):
                    r -= G[i, j] * x[j]
                w[i] = r
                if not passive[i] and i != last and r > wmax:
                    wmax = r
                    best = <int>i
            if best < 0:
                break
            passive[best] = 1
            last = -1
            for inner in range(max_it):
                p = 0
                for i in range(k):
                    if passive[i]:
                        idx[p] = <int>i
                        p += 1
                if p == 0:
                    break
                if not _chol_solve(G, h, &idx[0], p, L, s):
                    passive[best] = 0
                    last = best
                    break
                step = 1.0
                jmin = -1
                for i in range(p):
                    if s[i] <= 0.0:
                        r = x[idx[i]] / (x[idx[i]] - s[i])
                        if r < step:
                            step = r
                            jmin = idx[i]
                if jmin < 0:
                    for i in range(k):
                        x[i] = 0.0
                    for i in range(p):
                        x[idx[i]] = s[i]
                    break
                for i in range(p):
                    x[idx[i]] += step * (s[i] - x[idx[i]])
                x[jmin] = 0.0
                for i in range(k):
                    if passive[i] and x[i] <= 0.0:
                        passive[i] = 0
                        x[i] = 0.0
                        if i == best:
                            last = best
        for i in range(k):
            X[b, i] = x[i]
    return x_arr
