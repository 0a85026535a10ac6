"""Causal and semantic memory graphs for long dialogue histories.

Dialogue turns are distilled into atomic facts, clustered by topic, linked by
semantic and PMI-verified causal edges, and queried through a
retrieve / reason-about-consequences / re-retrieve loop.
"""

from ._ext import BACKEND
from .clustering import assign_incremental, cosine_sim, update_centroid
from .errors import *  # noqa: F401,F403
from .evaluation import EvalReport, EvalSample, Evidence, qa_accuracy, retrieval_accuracy, run_eval
from .extraction import extract_corpus, extract_facts, load_dialogue
from .graph_builder import (
    CausalCandidate,
    build_graph,
    build_semantic_edges,
    filter_causal,
    mine_causal_candidates,
    pmi_score,
)
from .model import Cluster, DialogueTurn, Edge, EdgeKind, EngineConfig, Fact, MemoryGraph, validate_config
from .persistence import load_graph, save_graph
from .pipeline import build, ingest, ingest_and_build
from .providers import ProviderSuite, build_suite, mock_suite
from .retrieval import (
    Query,
    RetrievalContext,
    answer,
    counterfactual,
    initial_retrieve,
    make_query,
    query_pipeline,
    refine_retrieve,
)

__version__ = "0.1.0"
