"""Query-time loop: similarity retrieval, counterfactual reasoning, refined retrieval, answer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import _ext, prompts
from .errors import EmptyGraph, ProviderError, ProviderRefusal, ValidationError
from .model import EngineConfig, Fact, MemoryGraph, is_unit, validate_config
from .providers import ChatRequest, ProviderSuite

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Query:
    text: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("query text is empty")
        if not is_unit(self.embedding):
            raise ValidationError("query embedding is not unit-normalized")


def make_query(text: str, suite: ProviderSuite) -> Query:
    if not text.strip():
        raise ValidationError("query text is empty")
    return Query(text, suite.embed([text], stage="query")[0])


@dataclass(frozen=True)
class ContextItem:
    kind: str  # "fact" or "knowledge"
    text: str
    fact_id: str | None = None
    session_id: str | None = None
    turn: int | None = None

    def line(self) -> str:
        if self.kind == "knowledge":
            return f"- World knowledge: {self.text}"
        t = f" turn {self.turn}" if self.turn is not None else ""
        return f"- [session {self.session_id}{t}] {self.text}"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "text": self.text}
        if self.kind == "fact":
            d.update(fact_id=self.fact_id, session_id=self.session_id, turn_index=self.turn)
        return d


@dataclass
class RetrievalContext:
    initial: list[Fact] = field(default_factory=list)
    counterfactual: str = ""
    refined: list[Fact] = field(default_factory=list)
    final: list[ContextItem] = field(default_factory=list)

    def final_fact_ids(self) -> list[str]:
        return [i.fact_id for i in self.final if i.kind == "fact" and i.fact_id is not None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial": [f.fact_id for f in self.initial],
            "counterfactual": self.counterfactual,
            "refined": [f.fact_id for f in self.refined],
            "final": [i.to_dict() for i in self.final],
        }


def _fact_item(f: Fact) -> ContextItem:
    return ContextItem("fact", f.text, f.fact_id, f.session_id, f.turn_index)


def assemble_context(initial: Sequence[Fact], counterfactual: str, refined: Sequence[Fact],
                     max_facts: int) -> RetrievalContext:
    """Initial facts first (never truncated), then the counterfactual statement,
    then refined facts not already present, up to ``max_facts`` facts in total."""
    final: list[ContextItem] = []
    seen: set[str] = set()
    for f in initial:
        if f.fact_id not in seen:
            seen.add(f.fact_id)
            final.append(_fact_item(f))
    if counterfactual.strip():
        final.append(ContextItem("knowledge", counterfactual.strip()))
    for f in refined:
        if len(seen) >= max_facts:
            break
        if f.fact_id not in seen:
            seen.add(f.fact_id)
            final.append(_fact_item(f))
    return RetrievalContext(list(initial), counterfactual, list(refined), final)


# -- step 1 --------------------------------------------------------------------


def rank(graph: MemoryGraph, vector: np.ndarray, k: int, *, kernels=None) -> list[tuple[str, float]]:
    """Exact top-k scan by cosine similarity; ties go to the smaller fact id."""
    kernels = kernels or _ext
    if k <= 0 or not graph.facts:
        return []
    ids, X = graph.matrix()
    q = np.ascontiguousarray(vector, dtype=np.float64)
    idx, sims = kernels.top_k(X, q, int(k))
    return [(ids[int(i)], float(s)) for i, s in zip(idx, sims)]


def initial_retrieve(q: Query, graph: MemoryGraph, k: int) -> list[Fact]:
    return [graph.facts[fid] for fid, _ in rank(graph, q.embedding, k)]


# -- step 2 --------------------------------------------------------------------


def counterfactual(q: Query, initial: Sequence[Fact], suite: ProviderSuite, *, enable_reasoning: bool = True) -> str:
    if not enable_reasoning:
        return ""
    request = ChatRequest(prompts.COUNTERFACTUAL_SYSTEM, prompts.counterfactual_user(q.text, [f.text for f in initial]))
    try:
        return suite.chat(request, stage="counterfactual").strip()
    except ProviderRefusal as exc:
        logger.warning("counterfactual step refused (%s); continuing with retrieval only", exc)
        return ""


# -- step 3 --------------------------------------------------------------------


@dataclass(frozen=True)
class Expansion:
    hop: int
    via: str
    fact_id: str
    kind: str
    score: float


@dataclass
class Refinement:
    hits: list[tuple[str, float]] = field(default_factory=list)
    expansions: list[Expansion] = field(default_factory=list)
    facts: list[Fact] = field(default_factory=list)


def expand(graph: MemoryGraph, seeds: Sequence[str], hops: int, taken: set[str], max_facts: int) -> list[Expansion]:
    """Walk ``hops`` steps out from ``seeds`` over both edge kinds.

    Each hop gathers unseen neighbors of the previous frontier, ranks them by
    their best connecting edge score (then fact id), and appends them while
    the fact budget lasts. ``taken`` is updated in place.
    """
    adj = graph.adjacency()
    out: list[Expansion] = []
    frontier = list(seeds)
    for hop in range(1, hops + 1):
        best: dict[str, tuple[float, str, str]] = {}
        for node in frontier:
            for nbr, edge in adj.get(node, ()):
                if nbr in taken:
                    continue
                cur = best.get(nbr)
                if cur is None or edge.score > cur[0]:
                    best[nbr] = (edge.score, node, edge.kind.value)
        ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
        frontier = []
        for nbr, (score, via, kind) in ranked:
            if len(taken) >= max_facts:
                return out
            taken.add(nbr)
            frontier.append(nbr)
            out.append(Expansion(hop, via, nbr, kind, score))
        if not frontier:
            break
    return out


def refine_retrieve(k_cs: str, graph: MemoryGraph, k: int, hops: int, suite: ProviderSuite, *,
                    already: Sequence[str] = (), max_facts: int = 40) -> Refinement:
    """Vector top-k on the counterfactual text plus bounded edge expansion."""
    if not k_cs.strip() or not graph.facts:
        return Refinement()
    vec = suite.embed([k_cs], stage="refine")[0]
    hits = rank(graph, vec, k)
    taken = set(already) | {fid for fid, _ in hits}
    expansions = expand(graph, [fid for fid, _ in hits], hops, taken, max_facts) if hops > 0 else []
    facts = [graph.facts[fid] for fid, _ in hits] + [graph.facts[e.fact_id] for e in expansions]
    return Refinement(hits, expansions, facts)


# -- answer --------------------------------------------------------------------


def answer(q: Query, context: RetrievalContext, suite: ProviderSuite) -> str:
    return answer_with_id(q, context, suite)[0]


def answer_with_id(q: Query, context: RetrievalContext, suite: ProviderSuite) -> tuple[str, str]:
    request = ChatRequest(prompts.ANSWER_SYSTEM, prompts.answer_user(q.text, [i.line() for i in context.final]))
    return suite.chat_with_id(request, stage="answer")


# -- full loop -----------------------------------------------------------------


@dataclass
class StepTrace:
    query: str
    initial: list[tuple[str, float]] = field(default_factory=list)
    counterfactual: str = ""
    reasoning_enabled: bool = True
    reasoning_failed: bool = False
    refined_hits: list[tuple[str, float]] = field(default_factory=list)
    expansions: list[Expansion] = field(default_factory=list)
    final: list[str] = field(default_factory=list)
    calls: list[dict[str, Any]] = field(default_factory=list)
    answer_call: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "initial": [{"fact_id": f, "similarity": s} for f, s in self.initial],
            "counterfactual": self.counterfactual,
            "reasoning_enabled": self.reasoning_enabled,
            "reasoning_failed": self.reasoning_failed,
            "refined_hits": [{"fact_id": f, "similarity": s} for f, s in self.refined_hits],
            "expansions": [e.__dict__ for e in self.expansions],
            "final": self.final,
            "calls": self.calls,
            "answer_call": self.answer_call,
        }


def retrieve_context(q: Query, graph: MemoryGraph, config: EngineConfig, suite: ProviderSuite,
                     trace: StepTrace | None = None) -> RetrievalContext:
    """Steps 1-3 without the final answer."""
    trace = trace if trace is not None else StepTrace(q.text)
    trace.reasoning_enabled = config.enable_reasoning
    scored = rank(graph, q.embedding, config.k_initial)
    trace.initial = scored
    initial = [graph.facts[fid] for fid, _ in scored]

    k_cs = ""
    if config.enable_reasoning:
        try:
            k_cs = counterfactual(q, initial, suite)
        except ProviderError as exc:
            logger.warning("counterfactual step failed (%s); continuing with retrieval only", exc)
        trace.reasoning_failed = not k_cs
    trace.counterfactual = k_cs

    refinement = refine_retrieve(k_cs, graph, config.k_counterfactual, config.graph_expansion_hops, suite,
                                 already=[f.fact_id for f in initial], max_facts=config.max_context_facts)
    trace.refined_hits = refinement.hits
    trace.expansions = refinement.expansions
    context = assemble_context(initial, k_cs, refinement.facts, config.max_context_facts)
    trace.final = [i.fact_id if i.kind == "fact" else "<knowledge>" for i in context.final]
    return context


def query_pipeline(q_text: str, graph: MemoryGraph, config: EngineConfig,
                   suite: ProviderSuite) -> tuple[str, RetrievalContext, StepTrace]:
    validate_config(config)
    if not graph.facts:
        raise EmptyGraph("empty graph")
    mark = suite.mark()
    q = make_query(q_text, suite)
    trace = StepTrace(q_text)
    context = retrieve_context(q, graph, config, suite, trace)
    ans, call_id = answer_with_id(q, context, suite)
    trace.answer_call = call_id
    trace.calls = [{"call_id": c.call_id, "kind": c.kind, "stage": c.stage} for c in suite.calls_since(mark)]
    return ans, context, trace
