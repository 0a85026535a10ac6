"""Pure numpy implementations of the numeric kernels.

Signatures and semantics mirror ``_kernels.pyx`` exactly. All inputs are
C-contiguous float64 arrays whose rows are already unit-normalized.
"""

from __future__ import annotations

import numpy as np

ZERO_NORM = 1e-12


def single_pass(X: np.ndarray, threshold: float):
    """Single-pass incremental clustering.

    Returns ``(labels, best_sims, counts, means, centroids)``. ``best_sims[i]``
    is the maximum similarity of row ``i`` to the centroids that existed when
    it arrived (``nan`` for the first row).
    """
    n, d = X.shape
    labels = np.empty(n, dtype=np.int64)
    best_sims = np.full(n, np.nan)
    counts = np.zeros(n, dtype=np.int64)
    means = np.zeros((n, d))
    centroids = np.zeros((n, d))
    K = 0
    for i in range(n):
        x = X[i]
        best_k = -1
        best = -np.inf
        if K:
            sims = (centroids[:K] * x).sum(axis=1)
            best_k = int(np.argmax(sims))  # first max wins ties
            best = float(sims[best_k])
            best_sims[i] = best
        if best_k >= 0 and 1.0 - best <= threshold:
            c = counts[best_k]
            m = (c * means[best_k] + x) / (c + 1)
            means[best_k] = m
            norm = np.sqrt((m * m).sum())
            centroids[best_k] = m / norm if norm >= ZERO_NORM else x
            counts[best_k] = c + 1
            labels[i] = best_k
        else:
            means[K] = x
            centroids[K] = x
            counts[K] = 1
            labels[i] = K
            K += 1
    return labels, best_sims, counts[:K].copy(), means[:K].copy(), centroids[:K].copy()


def pairs_above(X: np.ndarray, threshold: float):
    """All pairs ``i < j`` with ``dot(X[i], X[j]) > threshold``, in (i, j) order."""
    n = X.shape[0]
    if n < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), np.zeros(0)
    S = X @ X.T
    I, J = np.triu_indices(n, k=1)
    s = S[I, J]
    keep = s > threshold
    return I[keep].astype(np.int64), J[keep].astype(np.int64), s[keep].copy()


def top_k(X: np.ndarray, q: np.ndarray, k: int):
    """Indices of the ``k`` rows with largest ``dot(row, q)``; ties go to the lower index."""
    n = X.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    sims = (X * q).sum(axis=1)
    order = np.lexsort((np.arange(n), -sims))[:k]
    return order.astype(np.int64), sims[order]
