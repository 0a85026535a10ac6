"""Single-pass incremental topic clustering over fact embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _ext
from .errors import DimensionMismatch, ValidationError, ZeroVector
from .model import ZERO_NORM, Cluster, Fact, normalize


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("non-finite vector component")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def update_centroid(cluster: Cluster, new: np.ndarray, new_id: str) -> Cluster:
    """Fold one embedding into ``cluster`` and return the updated cluster.

    The running mean absorbs ``new`` as ``(n * mean + new) / (n + 1)``; the
    centroid is that mean renormalized. If the mean collapses to zero the
    centroid falls back to ``new``.
    """
    if cluster.member_count < 1:
        raise ValidationError("cannot update an empty cluster")
    new = np.asarray(new, dtype=np.float64)
    if new.shape != cluster.mean.shape:
        raise DimensionMismatch(f"embedding shape {new.shape} != centroid shape {cluster.mean.shape}")
    n = cluster.member_count
    mean = (n * cluster.mean + new) / (n + 1)
    norm = float(np.sqrt((mean * mean).sum()))
    centroid = mean / norm if norm >= ZERO_NORM else normalize(new)
    return Cluster(cluster.cluster_id, cluster.member_ids + (new_id,), centroid, mean)


@dataclass(frozen=True)
class Assignment:
    """One step of the pass: which cluster a fact went to and why."""

    fact_id: str
    cluster_id: int
    best_similarity: float  # max centroid similarity at arrival; nan when no cluster existed
    seeded: bool


def assign_incremental(
    facts: Sequence[tuple[Fact, np.ndarray]],
    threshold: float,
    *,
    kernels=None,
) -> tuple[list[Cluster], list[Assignment]]:
    """Cluster facts in the given (chronological) order.

    A fact joins the existing cluster whose centroid is most similar when the
    cosine distance ``1 - sim`` is at most ``threshold``; otherwise it seeds a
    new cluster. Ties go to the lowest cluster id. Returns the clusters and
    the per-fact assignment trace.
    """
    kernels = kernels or _ext
    if not facts:
        return [], []
    X = np.ascontiguousarray(np.stack([normalize(e) for _, e in facts]), dtype=np.float64)
    labels, best_sims, _counts, means, centroids = kernels.single_pass(X, float(threshold))
    members: list[list[str]] = [[] for _ in range(len(means))]
    trace: list[Assignment] = []
    for (fact, _), label, best in zip(facts, labels, best_sims):
        label = int(label)
        seeded = not members[label]
        members[label].append(fact.fact_id)
        trace.append(Assignment(fact.fact_id, label, float(best), seeded))
    clusters = [
        Cluster(k, tuple(members[k]), np.array(centroids[k]), np.array(means[k]))
        for k in range(len(means))
    ]
    return clusters, trace
