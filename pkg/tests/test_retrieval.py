from __future__ import annotations

import numpy as np
import pytest

from causalmem import _ext, prompts
from causalmem.errors import EmptyGraph, TransportError
from causalmem.model import Cluster, Edge, EngineConfig, Fact, MemoryGraph
from causalmem.providers import ChatResult, HashEmbedder, MockChat, ProviderSuite, ScriptRule, mock_suite
from causalmem.retrieval import (
    Query,
    StepTrace,
    assemble_context,
    counterfactual,
    expand,
    initial_retrieve,
    query_pipeline,
    rank,
    refine_retrieve,
    retrieve_context,
)

import oracles
from helpers import axis, make_facts, random_graph, unit_vectors

POOL = np.array([[1.0, 0, 0, 0], [0.5, 0.5, 0.5, 0.5], [0, 1.0, 0, 0], [0.5, -0.5, 0.5, -0.5],
                 [0, 0, 0, 1.0], [-0.5, 0.5, 0.5, 0.5]])


def graph_from(vectors, edges=()) -> MemoryGraph:
    facts = make_facts(len(vectors))
    ids = tuple(f.fact_id for f in facts)
    c = np.asarray(vectors[0], dtype=float)
    return MemoryGraph({f.fact_id: f for f in facts}, dict(zip(ids, map(np.asarray, vectors))),
                       [Cluster(0, ids, c, c)], list(edges))


@pytest.mark.parametrize("backend", ["python", "compiled"])
@pytest.mark.parametrize("k", [1, 10, 20, 500])
def test_rank_matches_full_sort_with_ties(backend, k):
    kernels = _ext.python_kernels if backend == "python" else _ext.compiled_kernels
    if kernels is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(k)
    X = POOL[rng.integers(0, len(POOL), 300)]
    g = graph_from(list(X))
    ids, M = g.matrix()
    for q in POOL:
        got = [fid for fid, _ in rank(g, q, k, kernels=kernels)]
        assert got == oracles.full_sort(ids, M, q, k)


def test_rank_random_and_degenerate():
    rng = np.random.default_rng(5)
    g = graph_from(list(unit_vectors(rng, 100, 8)))
    ids, M = g.matrix()
    q = unit_vectors(rng, 1, 8)[0]
    scored = rank(g, q, 20)
    assert [f for f, _ in scored] == oracles.full_sort(ids, M, q, 20)
    assert all(a[1] >= b[1] for a, b in zip(scored, scored[1:]))
    assert rank(g, q, 0) == []
    assert rank(MemoryGraph(), q, 5) == []
    assert len(initial_retrieve(Query("q", q), g, 1000)) == 100


def test_expand_ranks_by_edge_score_within_budget():
    # A is the seed; B, C, D hang off it with scores 0.9, 0.8, 0.7; room for two
    g = graph_from([axis(4, i % 4) for i in range(4)])
    a, b, c, d = list(g.facts)
    g.edges = [Edge.semantic(a, d, 0.7), Edge.causal(c, a, 0.8), Edge.semantic(a, b, 0.9)]
    taken = {a}
    out = expand(g, [a], 1, taken, max_facts=3)
    assert [(e.fact_id, e.score, e.kind, e.via) for e in out] == [(b, 0.9, "semantic", a), (c, 0.8, "causal", a)]
    assert taken == {a, b, c}


def test_expand_tie_breaks_by_fact_id_and_best_edge():
    g = graph_from([axis(4, i % 4) for i in range(4)])
    a, b, c, d = list(g.facts)
    g.edges = [Edge.semantic(a, c, 0.5), Edge.semantic(a, d, 0.5), Edge.semantic(b, d, 0.6)]
    out = expand(g, [a, b], 1, {a, b}, max_facts=10)
    assert [(e.fact_id, e.score) for e in out] == sorted([(c, 0.5), (d, 0.6)], key=lambda t: (-t[1], t[0]))
    assert next(e for e in out if e.fact_id == d).via == b


def test_expand_two_hops_matches_manual_bfs():
    rng = np.random.default_rng(9)
    g = random_graph(rng, 60, semantic=0.2, n_causal=40)
    seeds = list(g.facts)[:3]
    nbrs = {f: set() for f in g.facts}
    for e in g.edges:
        nbrs[e.src].add(e.dst)
        nbrs[e.dst].add(e.src)
    hop1 = set().union(*(nbrs[s] for s in seeds)) - set(seeds)
    hop2 = set().union(*(nbrs[x] for x in hop1)) - hop1 - set(seeds) if hop1 else set()
    out = expand(g, seeds, 2, set(seeds), max_facts=10_000)
    assert {e.fact_id for e in out if e.hop == 1} == hop1
    assert {e.fact_id for e in out if e.hop == 2} == hop2


def test_counterfactual_prompt_and_disable():
    suite = mock_suite(rules=[ScriptRule("Sago Palms are highly toxic to dogs", task="counterfactual")])
    facts = [Fact.create("User's puppy is teething.", "s", 0, 0)]
    q = Query("Where can I buy Sago Palms?", axis(4, 0))
    assert counterfactual(q, facts, suite) == "Sago Palms are highly toxic to dogs"
    user = prompts.counterfactual_user(q.text, [f.text for f in facts])
    assert user.startswith("If the user does Where can I buy Sago Palms?, what negative consequences")
    assert user.endswith("- User's puppy is teething.")
    n = len(suite.calls)
    assert counterfactual(q, facts, suite, enable_reasoning=False) == ""
    assert len(suite.calls) == n


def test_counterfactual_refusal_is_empty():
    suite = mock_suite(rules=[ScriptRule("", task="counterfactual", refuse=True)])
    assert counterfactual(Query("q", axis(2, 0)), [], suite) == ""


def test_assemble_context_order_and_dedup():
    f = make_facts(5)
    ctx = assemble_context([f[0], f[1]], "knowledge", [f[1], f[2], f[3], f[4]], max_facts=4)
    assert [(i.kind, i.fact_id) for i in ctx.final] == [
        ("fact", f[0].fact_id), ("fact", f[1].fact_id), ("knowledge", None), ("fact", f[2].fact_id),
        ("fact", f[3].fact_id)]
    assert ctx.final[2].line() == "- World knowledge: knowledge"
    assert ctx.final[0].line() == f"- [session {f[0].session_id} turn {f[0].turn_index}] {f[0].text}"
    no_k = assemble_context([f[0]], "  ", [f[0]], 40)
    assert [i.kind for i in no_k.final] == ["fact"]


def test_refine_retrieve_skips_when_no_knowledge():
    suite = mock_suite()
    g = graph_from([axis(4, 0)])
    assert refine_retrieve("", g, 10, 1, suite).facts == []
    assert suite.calls == []


def _text_graph(texts, suite):
    facts = [Fact.create(t, "s", i, 0) for i, t in enumerate(texts)]
    vecs = suite.embed([f.text for f in facts])
    c = vecs[0]
    return MemoryGraph({f.fact_id: f for f in facts}, {f.fact_id: v for f, v in zip(facts, vecs)},
                       [Cluster(0, tuple(f.fact_id for f in facts), c, c)], [])


def test_query_pipeline_trace_and_calls():
    suite = mock_suite(rules=[ScriptRule("dogs chew shoes", task="counterfactual")])
    g = _text_graph(["User owns a dog.", "User likes shoes.", "User visited Narva."], suite)
    ans, ctx, trace = query_pipeline("buy new shoes", g, EngineConfig(), suite)
    assert [c["stage"] for c in trace.calls] == ["query", "counterfactual", "refine", "answer"]
    assert trace.answer_call == trace.calls[-1]["call_id"]
    assert "<knowledge>" in trace.final
    assert ctx.counterfactual == "dogs chew shoes"


def test_query_pipeline_empty_graph():
    with pytest.raises(EmptyGraph, match="empty graph"):
        query_pipeline("anything", MemoryGraph(), EngineConfig(), mock_suite())


def test_counterfactual_transport_failure_falls_back():
    class Failing:
        def complete(self, request):
            if prompts.task_of(request.system_prompt) == "counterfactual":
                raise TransportError("down")
            return ChatResult("fine")

    base = mock_suite()
    g = _text_graph(["User owns a dog.", "User likes shoes."], base)
    suite = ProviderSuite(Failing(), base.embedder, base.scorer)
    q = Query("shoes", suite.embed(["shoes"])[0])
    trace = StepTrace("shoes")
    ctx = retrieve_context(q, g, EngineConfig(), suite, trace)
    assert trace.reasoning_failed and ctx.counterfactual == ""
    assert [i.kind for i in ctx.final] == ["fact", "fact"]


def test_budget_caps_refined_facts():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 120, semantic=0.0, n_causal=100)
    cfg = EngineConfig(k_initial=5, k_counterfactual=10, max_context_facts=12)
    suite = ProviderSuite(MockChat([ScriptRule("anything at all", task="counterfactual")]),
                          HashEmbedder(dim=16), mock_suite().scorer)
    q = Query("q", unit_vectors(rng, 1, 16)[0])
    ctx = retrieve_context(q, g, cfg, suite)
    assert len(ctx.final_fact_ids()) == 12
