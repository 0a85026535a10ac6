"""End-to-end ingest and build: dialogue -> facts -> embeddings -> clusters -> graph."""

from __future__ import annotations

import logging
from typing import Sequence

from .clustering import assign_incremental
from .extraction import extract_corpus
from .graph_builder import build_graph
from .model import DialogueTurn, EngineConfig, MemoryGraph, validate_config
from .providers import ProviderSuite

logger = logging.getLogger(__name__)

EMBED_BATCH = 64


def embed_facts(texts: Sequence[str], suite: ProviderSuite):
    out = []
    for start in range(0, len(texts), EMBED_BATCH):
        out.extend(suite.embed(texts[start:start + EMBED_BATCH], stage="embed_facts"))
    return out


def ingest(dialogue: Sequence[DialogueTurn], config: EngineConfig, suite: ProviderSuite) -> MemoryGraph:
    """Extract, embed and cluster; the result has no edges yet."""
    validate_config(config)
    facts = extract_corpus(dialogue, suite)
    if not facts:
        return MemoryGraph()
    vectors = embed_facts([f.text for f in facts], suite)
    clusters, _ = assign_incremental(list(zip(facts, vectors)), config.cluster_distance_threshold)
    logger.info("ingested %d turns -> %d facts in %d clusters", len(dialogue), len(facts), len(clusters))
    return MemoryGraph({f.fact_id: f for f in facts}, {f.fact_id: v for f, v in zip(facts, vectors)},
                       clusters, []).validate()


def build(graph: MemoryGraph, config: EngineConfig, suite: ProviderSuite) -> MemoryGraph:
    """(Re)build every edge of an ingested graph under ``config``."""
    return build_graph(graph.facts, graph.embeddings, graph.clusters, config, suite)


def ingest_and_build(dialogue: Sequence[DialogueTurn], config: EngineConfig, suite: ProviderSuite) -> MemoryGraph:
    return build(ingest(dialogue, config, suite), config, suite)
