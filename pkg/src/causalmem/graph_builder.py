"""Memory graph construction: semantic edges, causal mining and PMI verification."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import _ext, prompts
from .errors import MalformedReply, ProviderError
from .model import Cluster, Edge, EngineConfig, Fact, MemoryGraph, sort_edges, validate_config
from .providers import ChatRequest, NllRequest, ProviderSuite

logger = logging.getLogger(__name__)

UNCONDITIONAL_CONTEXT = "The fact is that"
CONDITIONAL_SUFFIX = ". As a result,"

# prompt-size guard for causal mining
MAX_SCOPE = 400
WINDOW = 200
WINDOW_STRIDE = 100


class Origin(str, Enum):
    CLUSTER = "cluster"
    SESSION = "session"


@dataclass(frozen=True)
class CausalCandidate:
    src: str
    dst: str
    origin: Origin


# -- semantic edges ----------------------------------------------------------


def build_semantic_edges(cluster: Cluster, embeddings: Mapping[str, np.ndarray], threshold: float,
                         *, kernels=None) -> list[Edge]:
    """One edge per intra-cluster pair whose cosine similarity exceeds ``threshold``."""
    kernels = kernels or _ext
    ids = list(cluster.member_ids)
    if len(ids) < 2:
        return []
    X = np.ascontiguousarray(np.stack([embeddings[i] for i in ids]), dtype=np.float64)
    I, J, S = kernels.pairs_above(X, float(threshold))
    return sort_edges(Edge.semantic(ids[i], ids[j], min(1.0, max(-1.0, s))) for i, j, s in zip(I, J, S))


# -- causal candidates -------------------------------------------------------

_ARROW_RE = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")


def parse_causal_reply(reply: str, m: int) -> list[tuple[int, int]]:
    """Parse ``i -> j`` lines (1-based) into 0-based index pairs.

    Out-of-range indices and self-pairs are dropped with a warning. A nonempty
    reply without a single arrow line is a MalformedReply.
    """
    pairs: list[tuple[int, int]] = []
    matched = False
    for line in reply.splitlines():
        if not line.strip():
            continue
        hit = _ARROW_RE.match(line)
        if not hit:
            logger.warning("ignoring unparsable causal line %r", line[:80])
            continue
        matched = True
        i, j = int(hit.group(1)), int(hit.group(2))
        if i == j or not (1 <= i <= m and 1 <= j <= m):
            logger.warning("dropping invalid causal pair %d -> %d over %d facts", i, j, m)
            continue
        pairs.append((i - 1, j - 1))
    if not matched and reply.strip():
        raise MalformedReply("causal reply has no 'i -> j' line", reply)
    return pairs


def mine_causal_candidates(scope: Sequence[Fact], suite: ProviderSuite,
                           origin: Origin = Origin.CLUSTER) -> list[CausalCandidate]:
    if len(scope) < 2:
        return []
    request = ChatRequest(prompts.CAUSAL_SYSTEM, prompts.causal_user([f.text for f in scope]))
    reply = suite.chat(request, stage="causal_mining")
    try:
        pairs = parse_causal_reply(reply, len(scope))
    except MalformedReply:
        logger.warning("malformed causal reply for a %s scope of %d facts", origin.value, len(scope))
        return []
    out: list[CausalCandidate] = []
    seen: set[tuple[str, str]] = set()
    for i, j in pairs:
        key = (scope[i].fact_id, scope[j].fact_id)
        if key not in seen:
            seen.add(key)
            out.append(CausalCandidate(key[0], key[1], origin))
    return out


def _windows(members: list[Fact]) -> list[list[Fact]]:
    if len(members) <= MAX_SCOPE:
        return [members]
    out = []
    start = 0
    while True:
        out.append(members[start:start + WINDOW])
        if start + WINDOW >= len(members):
            return out
        start += WINDOW_STRIDE


def causal_scopes(facts: Mapping[str, Fact], clusters: Sequence[Cluster]) -> list[tuple[Origin, list[Fact]]]:
    """Every cluster, then every session, each as a chronologically ordered fact list."""
    scopes: list[tuple[Origin, list[Fact]]] = []
    for c in sorted(clusters, key=lambda c: c.cluster_id):
        members = [facts[m] for m in c.member_ids]
        scopes.extend((Origin.CLUSTER, w) for w in _windows(members))
    sessions: dict[str, list[Fact]] = {}
    for f in facts.values():
        sessions.setdefault(f.session_id, []).append(f)
    for members in sessions.values():
        scopes.extend((Origin.SESSION, w) for w in _windows(members))
    return [(o, s) for o, s in scopes if len(s) >= 2]


def union_candidates(groups: Sequence[Sequence[CausalCandidate]]) -> list[CausalCandidate]:
    seen: set[tuple[str, str]] = set()
    out = []
    for group in groups:
        for c in group:
            if (c.src, c.dst) not in seen:
                seen.add((c.src, c.dst))
                out.append(c)
    return out


# -- PMI verification ----------------------------------------------------------


def conditional_context(src_text: str) -> str:
    return src_text.rstrip(" .!?;") + CONDITIONAL_SUFFIX


def pmi_score(src: Fact, dst: Fact, suite: ProviderSuite) -> float:
    """Drop in the target's NLL when it follows the antecedent instead of a neutral prefix."""
    unconditional = suite.nll(NllRequest(UNCONDITIONAL_CONTEXT, dst.text), stage="pmi")
    conditional = suite.nll(NllRequest(conditional_context(src.text), dst.text), stage="pmi")
    return unconditional - conditional


def filter_causal(candidates: Sequence[CausalCandidate], facts: Mapping[str, Fact], suite: ProviderSuite,
                  threshold: float) -> list[Edge]:
    """Keep candidates whose PMI score is strictly above ``threshold``."""
    if not candidates:
        return []

    def score(c: CausalCandidate):
        try:
            return pmi_score(facts[c.src], facts[c.dst], suite), None
        except ProviderError as exc:
            logger.warning("PMI scoring failed for %s -> %s: %s", c.src, c.dst, exc)
            return None, exc

    with ThreadPoolExecutor(max_workers=max(1, suite.max_in_flight)) as pool:
        results = list(pool.map(score, candidates))
    errors = [e for _, e in results if e is not None]
    if len(errors) == len(candidates):
        raise errors[0]
    return sort_edges(
        Edge.causal(c.src, c.dst, s) for c, (s, _) in zip(candidates, results) if s is not None and s > threshold
    )


# -- assembly ------------------------------------------------------------------


def build_graph(facts: Mapping[str, Fact] | Sequence[Fact], embeddings: Mapping[str, np.ndarray],
                clusters: Sequence[Cluster], config: EngineConfig, suite: ProviderSuite) -> MemoryGraph:
    """Merge semantic and PMI-verified causal edges over the clustered facts."""
    validate_config(config)
    if not isinstance(facts, Mapping):
        facts = {f.fact_id: f for f in facts}
    edges: list[Edge] = []
    if facts and config.enable_semantic_edges:
        for c in clusters:
            edges.extend(build_semantic_edges(c, embeddings, config.semantic_edge_threshold))
    if facts and config.enable_causal_edges:
        scopes = causal_scopes(facts, clusters)
        with ThreadPoolExecutor(max_workers=max(1, suite.max_in_flight)) as pool:
            groups = list(pool.map(lambda s: mine_causal_candidates(s[1], suite, s[0]), scopes))
        candidates = union_candidates(groups)
        logger.info("causal mining: %d scopes, %d candidates", len(scopes), len(candidates))
        edges.extend(filter_causal(candidates, facts, suite, config.pmi_threshold))
    graph = MemoryGraph(dict(facts), dict(embeddings), list(clusters), sort_edges(edges))
    return graph.validate()
