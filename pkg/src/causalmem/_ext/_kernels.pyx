# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numeric kernels. Semantics match ``_kernels_py`` exactly."""

import numpy as np

from libc.math cimport sqrt, NAN, INFINITY

cdef double ZERO_NORM = 1e-12


cdef inline double _dot(const double[:, ::1] A, Py_ssize_t i, const double[:, ::1] B, Py_ssize_t j, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t t
    cdef double s = 0.0
    for t in range(d):
        s += A[i, t] * B[j, t]
    return s


def single_pass(const double[:, ::1] X, double threshold):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    labels_arr = np.empty(n, dtype=np.int64)
    best_arr = np.full(n, np.nan)
    counts_arr = np.zeros(n, dtype=np.int64)
    means_arr = np.zeros((n, d))
    cents_arr = np.zeros((n, d))
    cdef long long[::1] labels = labels_arr
    cdef double[::1] best_sims = best_arr
    cdef long long[::1] counts = counts_arr
    cdef double[:, ::1] means = means_arr
    cdef double[:, ::1] cents = cents_arr
    cdef Py_ssize_t K = 0, i, k, t, best_k
    cdef double best, s, norm, m
    cdef long long c
    with nogil:
        for i in range(n):
            best_k = -1
            best = -INFINITY
            for k in range(K):
                s = _dot(cents, k, X, i, d)
                if s > best:
                    best = s
                    best_k = k
            if K > 0:
                best_sims[i] = best
            if best_k >= 0 and 1.0 - best <= threshold:
                c = counts[best_k]
                norm = 0.0
                for t in range(d):
                    m = (c * means[best_k, t] + X[i, t]) / (c + 1)
                    means[best_k, t] = m
                    norm += m * m
                norm = sqrt(norm)
                if norm >= ZERO_NORM:
                    for t in range(d):
                        cents[best_k, t] = means[best_k, t] / norm
                else:
                    for t in range(d):
                        cents[best_k, t] = X[i, t]
                counts[best_k] = c + 1
                labels[i] = best_k
            else:
                for t in range(d):
                    means[K, t] = X[i, t]
                    cents[K, t] = X[i, t]
                counts[K] = 1
                labels[i] = K
                K += 1
    return labels_arr, best_arr, counts_arr[:K].copy(), means_arr[:K].copy(), cents_arr[:K].copy()


def pairs_above(const double[:, ::1] X, double threshold):
    cdef Py_ssize_t n = X.shape[0]
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    # the Gram matrix goes through BLAS, same as the fallback; only the scan is compiled
    Xa = np.asarray(X)
    cdef const double[:, ::1] G = np.ascontiguousarray(Xa @ Xa.T)
    cdef Py_ssize_t i, j, m = 0
    for i in range(n):
        for j in range(i + 1, n):
            if G[i, j] > threshold:
                m += 1
    I_arr = np.empty(m, dtype=np.int64)
    J_arr = np.empty(m, dtype=np.int64)
    S_arr = np.empty(m)
    cdef long long[::1] I = I_arr
    cdef long long[::1] J = J_arr
    cdef double[::1] S = S_arr
    m = 0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                if G[i, j] > threshold:
                    I[m] = i
                    J[m] = j
                    S[m] = G[i, j]
                    m += 1
    return I_arr, J_arr, S_arr


def top_k(const double[:, ::1] X, const double[::1] q, Py_ssize_t k):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    if k > n:
        k = n
    if k <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx_arr = np.empty(k, dtype=np.int64)
    sim_arr = np.empty(k)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] sims = sim_arr
    cdef Py_ssize_t i, t, filled = 0, pos
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for t in range(d):
                s += X[i, t] * q[t]
            # rows arrive in ascending index, so an equal score never displaces
            if filled == k and s <= sims[k - 1]:
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and sims[pos - 1] < s:
                if pos < k:
                    sims[pos] = sims[pos - 1]
                    idx[pos] = idx[pos - 1]
                pos -= 1
            sims[pos] = s
            idx[pos] = i
            if filled < k:
                filled += 1
    return idx_arr, sim_arr
