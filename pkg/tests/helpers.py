"""Shared builders for tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from causalmem.clustering import assign_incremental
from causalmem.graph_builder import build_semantic_edges
from causalmem.model import DialogueTurn, Edge, Fact, MemoryGraph, normalize

FIXTURES = Path(__file__).parent / "fixtures"
SAGO = FIXTURES / "sago_palm"


def unit_vectors(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def clustered_vectors(rng: np.random.Generator, n: int, d: int, n_topics: int, spread: float) -> np.ndarray:
    """Unit vectors scattered around ``n_topics`` random directions."""
    topics = unit_vectors(rng, n_topics, d)
    X = topics[rng.integers(0, n_topics, n)] + spread * rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def make_facts(n: int, sessions: int = 3, prefix: str = "fact") -> list[Fact]:
    return [Fact.create(f"{prefix} number {i}", f"s{i % sessions}", i // sessions, 0) for i in range(n)]


def random_graph(rng: np.random.Generator, n: int, d: int = 16, *, threshold: float = 0.4,
                 semantic: float = 0.3, n_causal: int = 0) -> MemoryGraph:
    facts = make_facts(n)
    X = clustered_vectors(rng, n, d, max(1, n // 8), 0.6) if n else np.zeros((0, d))
    emb = {f.fact_id: X[i] for i, f in enumerate(facts)}
    clusters, _ = assign_incremental([(f, emb[f.fact_id]) for f in facts], threshold)
    edges = []
    for c in clusters:
        edges.extend(build_semantic_edges(c, emb, semantic))
    seen = set()
    for _ in range(n_causal if n > 1 else 0):
        a, b = rng.choice(n, 2, replace=False)
        key = (facts[a].fact_id, facts[b].fact_id)
        if key not in seen:
            seen.add(key)
            edges.append(Edge.causal(*key, float(round(rng.uniform(0.81, 6.0), 6))))
    return MemoryGraph({f.fact_id: f for f in facts}, emb, clusters, edges).validate()


def turns(*texts: str, session: str = "s0") -> list[DialogueTurn]:
    return [DialogueTurn(session, i, t, "ok") for i, t in enumerate(texts)]


def axis(d: int, i: int, sign: float = 1.0) -> np.ndarray:
    v = np.zeros(d)
    v[i] = sign
    return v


__all__ = ["FIXTURES", "SAGO", "axis", "clustered_vectors", "make_facts", "normalize", "random_graph", "turns",
           "unit_vectors"]
