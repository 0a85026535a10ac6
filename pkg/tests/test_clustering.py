from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalmem import _ext
from causalmem.clustering import assign_incremental, cosine_sim, update_centroid
from causalmem.errors import DimensionMismatch, ValidationError, ZeroVector
from causalmem.model import Cluster, normalize

import oracles
from helpers import axis, clustered_vectors, make_facts, unit_vectors


def _run(X, threshold, kernels=None):
    facts = make_facts(len(X))
    clusters, trace = assign_incremental(list(zip(facts, X)), threshold, kernels=kernels)
    return facts, clusters, trace


def test_cosine_sim_edges():
    assert cosine_sim(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == 1.0
    assert cosine_sim(np.array([1.0, 0.0]), np.array([-3.0, 0.0])) == -1.0
    with pytest.raises(DimensionMismatch):
        cosine_sim(np.ones(2), np.ones(3))
    with pytest.raises(ZeroVector):
        cosine_sim(np.zeros(2), np.ones(2))
    with pytest.raises(ValidationError):
        cosine_sim(np.array([np.nan, 1.0]), np.ones(2))


def test_hand_example():
    # x0 = e0 seeds 0; x1 at 0.9 to e0 joins (distance 0.1 <= 0.2); x2 = e1 seeds 1
    x1 = normalize([0.9, np.sqrt(1 - 0.81), 0.0])
    X = np.stack([axis(3, 0), x1, axis(3, 1)])
    facts, clusters, trace = _run(X, 0.2)
    assert [c.member_ids for c in clusters] == [(facts[0].fact_id, facts[1].fact_id), (facts[2].fact_id,)]
    assert [t.seeded for t in trace] == [True, False, True]
    assert np.isnan(trace[0].best_similarity)
    assert trace[1].best_similarity == pytest.approx(0.9)
    assert np.allclose(clusters[0].mean, (X[0] + X[1]) / 2)
    assert np.allclose(clusters[0].centroid, normalize(X[0] + X[1]))


def test_threshold_is_inclusive():
    # similarity exactly 0.5 -> distance exactly 0.5 (dyadic, exact in floating point)
    v = np.array([0.5, np.sqrt(0.75), 0.0])
    X = np.stack([axis(3, 0), v])
    assert float(X[0] @ X[1]) == 0.5
    _, clusters, _ = _run(X, 0.5)
    assert len(clusters) == 1
    _, clusters, _ = _run(X, 0.4999)
    assert len(clusters) == 2


def test_ties_go_to_lowest_cluster_id():
    # two orthogonal seeds, then a vector equidistant from both
    x = np.array([0.5, 0.5, np.sqrt(0.5)])
    X = np.stack([axis(3, 0), axis(3, 1), x])
    facts, clusters, trace = _run(X, 0.6)
    assert trace[2].cluster_id == 0


def test_threshold_zero_only_merges_identical():
    X = np.stack([axis(4, 0), axis(4, 0), axis(4, 1)])
    _, clusters, _ = _run(X, 0.0)
    assert [c.member_count for c in clusters] == [2, 1]


def test_threshold_two_merges_everything():
    rng = np.random.default_rng(1)
    _, clusters, _ = _run(unit_vectors(rng, 30, 8), 2.0)
    assert len(clusters) == 1


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_matches_recomputing_oracle(backend):
    kernels = _ext.python_kernels if backend == "python" else _ext.compiled_kernels
    if kernels is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(7)
    X = clustered_vectors(rng, 200, 12, 6, 0.5)
    facts, clusters, _ = _run(X, 0.3, kernels)
    labels, members = oracles.single_pass(X, 0.3)
    assert [[facts[i].fact_id for i in m] for m in members] == [list(c.member_ids) for c in clusters]
    for c, m in zip(clusters, members):
        mean = np.mean(X[m], axis=0)
        assert np.allclose(c.mean, mean, atol=1e-9)
        assert np.allclose(c.centroid, mean / np.linalg.norm(mean), atol=1e-9)


def test_update_centroid_running_mean():
    rng = np.random.default_rng(2)
    X = unit_vectors(rng, 50, 6)
    c = Cluster(0, ("f0",), X[0].copy(), X[0].copy())
    for i in range(1, 50):
        c = update_centroid(c, X[i], f"f{i}")
    assert c.member_count == 50
    direct = X.mean(axis=0)
    assert np.allclose(c.mean, direct, atol=1e-9)
    assert np.allclose(c.centroid, direct / np.linalg.norm(direct), atol=1e-9)


def test_update_centroid_zero_mean_falls_back():
    c = Cluster(0, ("a",), axis(2, 0), axis(2, 0))
    out = update_centroid(c, axis(2, 0, -1.0), "b")
    assert np.allclose(out.centroid, [-1.0, 0.0])
    with pytest.raises(DimensionMismatch):
        update_centroid(c, np.ones(3), "c")


vectors = st.integers(2, 40).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0.0, 1.2)))


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_partition_and_soundness_properties(params):
    n, d, seed, tau = params
    X = unit_vectors(np.random.default_rng(seed), n, d)
    facts, clusters, trace = _run(X, tau)
    ids = [f.fact_id for f in facts]
    listed = [m for c in clusters for m in c.member_ids]
    assert sorted(listed) == sorted(ids) and len(listed) == len(set(listed))
    assert [c.cluster_id for c in clusters] == list(range(len(clusters)))
    for t in trace:
        if not t.seeded:
            assert 1.0 - t.best_similarity <= tau
        elif not np.isnan(t.best_similarity):
            assert 1.0 - t.best_similarity > tau
    for c in clusters:
        assert abs(np.linalg.norm(c.centroid) - 1.0) < 1e-9
