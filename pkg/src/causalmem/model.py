"""Domain types: dialogue turns, facts, clusters, edges, the memory graph and config."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import ConfigError, IntegrityError, ValidationError, ZeroVector

NORM_TOLERANCE = 1e-6
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class DialogueTurn:
    session_id: str
    turn_index: int
    user_text: str
    assistant_text: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.turn_index, int) or self.turn_index < 0:
            raise ValidationError(f"turn_index must be a nonnegative integer, got {self.turn_index!r}")
        if not self.user_text or not self.user_text.strip():
            raise ValidationError(f"turn {self.session_id}/{self.turn_index}: user_text is empty")

    @property
    def key(self) -> tuple[str, int]:
        return (self.session_id, self.turn_index)


def make_fact_id(text: str, session_id: str, turn_index: int, extraction_rank: int) -> str:
    payload = json.dumps([text, session_id, turn_index, extraction_rank], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Fact:
    fact_id: str
    text: str
    session_id: str
    turn_index: int
    extraction_rank: int

    @classmethod
    def create(cls, text: str, session_id: str, turn_index: int, extraction_rank: int) -> "Fact":
        text = text.strip()
        if not text:
            raise ValidationError("fact text is empty")
        return cls(make_fact_id(text, session_id, turn_index, extraction_rank), text, session_id, turn_index, extraction_rank)

    @property
    def provenance(self) -> tuple[str, int]:
        return (self.session_id, self.turn_index)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Fact":
        return cls(str(d["fact_id"]), str(d["text"]), str(d["session_id"]), int(d["turn_index"]), int(d["extraction_rank"]))


# -- embeddings --------------------------------------------------------------
# Embeddings are plain 1-d float64 numpy arrays; these helpers enforce the
# finiteness and unit-norm contracts.


def normalize(vector: Iterable[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"embedding must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("embedding has non-finite components")
    n = float(np.linalg.norm(v))
    if n < ZERO_NORM:
        raise ZeroVector("cannot normalize a zero vector")
    return v / n


def is_unit(vector: np.ndarray, tol: float = NORM_TOLERANCE) -> bool:
    return bool(np.all(np.isfinite(vector))) and abs(float(np.linalg.norm(vector)) - 1.0) <= tol


# -- clusters and edges ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cluster:
    """A topic group.

    ``mean`` is the running (unnormalized) mean of member embeddings and
    ``centroid`` its L2-normalized form, used for similarity tests.
    """

    cluster_id: int
    member_ids: tuple[str, ...]
    centroid: np.ndarray
    mean: np.ndarray

    @property
    def member_count(self) -> int:
        return len(self.member_ids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "member_ids": list(self.member_ids),
            "member_count": self.member_count,
            "centroid": [float(x) for x in self.centroid],
            "mean": [float(x) for x in self.mean],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Cluster":
        return cls(
            int(d["cluster_id"]),
            tuple(str(m) for m in d["member_ids"]),
            np.asarray(d["centroid"], dtype=np.float64),
            np.asarray(d["mean"], dtype=np.float64),
        )


class EdgeKind(str, Enum):
    CAUSAL = "causal"
    SEMANTIC = "semantic"


@dataclass(frozen=True, order=True)
class Edge:
    kind: EdgeKind
    src: str
    dst: str
    score: float = field(compare=False)

    @classmethod
    def semantic(cls, a: str, b: str, score: float) -> "Edge":
        src, dst = (a, b) if a < b else (b, a)
        return cls(EdgeKind.SEMANTIC, src, dst, float(score))

    @classmethod
    def causal(cls, src: str, dst: str, score: float) -> "Edge":
        return cls(EdgeKind.CAUSAL, src, dst, float(score))

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.kind.value, self.src, self.dst)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "src": self.src, "dst": self.dst, "score": self.score}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Edge":
        return cls(EdgeKind(d["kind"]), str(d["src"]), str(d["dst"]), float(d["score"]))


def sort_edges(edges: Iterable[Edge]) -> list[Edge]:
    return sorted(edges, key=lambda e: e.key)


# -- graph -------------------------------------------------------------------


@dataclass(eq=False)
class MemoryGraph:
    """Facts as nodes plus semantic (undirected) and causal (directed) edges.

    ``facts`` keeps chronological insertion order.
    """

    facts: dict[str, Fact] = field(default_factory=dict)
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    clusters: list[Cluster] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    _matrix: tuple[list[str], np.ndarray] | None = field(default=None, init=False, repr=False)
    _adjacency: dict[str, list[tuple[str, Edge]]] | None = field(default=None, init=False, repr=False)

    def __len__(self) -> int:
        return len(self.facts)

    @property
    def dim(self) -> int:
        for v in self.embeddings.values():
            return int(v.shape[0])
        return 0

    def matrix(self) -> tuple[list[str], np.ndarray]:
        """Fact ids in ascending id order and the matching row-major embedding matrix."""
        if self._matrix is None:
            ids = sorted(self.facts)
            if ids:
                X = np.ascontiguousarray(np.stack([self.embeddings[i] for i in ids]), dtype=np.float64)
            else:
                X = np.zeros((0, 0), dtype=np.float64)
            self._matrix = (ids, X)
        return self._matrix

    def adjacency(self) -> dict[str, list[tuple[str, Edge]]]:
        """Neighbor lists over both edge kinds; causal edges are walkable in both directions."""
        if self._adjacency is None:
            adj: dict[str, list[tuple[str, Edge]]] = {fid: [] for fid in self.facts}
            for e in self.edges:
                adj[e.src].append((e.dst, e))
                adj[e.dst].append((e.src, e))
            self._adjacency = adj
        return self._adjacency

    def degrees(self) -> dict[str, int]:
        """Number of distinct neighbors per fact, counting both edge kinds."""
        nbrs: dict[str, set[str]] = {fid: set() for fid in self.facts}
        for e in self.edges:
            nbrs[e.src].add(e.dst)
            nbrs[e.dst].add(e.src)
        return {fid: len(s) for fid, s in nbrs.items()}

    def mean_degree(self, kind: EdgeKind | None = None) -> float:
        if not self.facts:
            return 0.0
        n_edges = sum(1 for e in self.edges if kind is None or e.kind == kind)
        return 2.0 * n_edges / len(self.facts)

    def edges_of(self, kind: EdgeKind) -> list[Edge]:
        return [e for e in self.edges if e.kind == kind]

    def cluster_of(self) -> dict[str, int]:
        return {m: c.cluster_id for c in self.clusters for m in c.member_ids}

    def validate(self) -> "MemoryGraph":
        """Check every structural invariant; raise IntegrityError on the first violation."""
        for fid, fact in self.facts.items():
            if fid != fact.fact_id:
                raise IntegrityError(f"fact keyed {fid} carries id {fact.fact_id}")
            if not fact.text.strip():
                raise IntegrityError(f"fact {fid} has empty text")
            if fid not in self.embeddings:
                raise IntegrityError(f"fact {fid} has no embedding")
        extra = set(self.embeddings) - set(self.facts)
        if extra:
            raise IntegrityError(f"embedding for unknown fact {sorted(extra)[0]}")
        dims = {int(v.shape[0]) for v in self.embeddings.values()}
        if len(dims) > 1:
            raise IntegrityError(f"inconsistent embedding dimensions {sorted(dims)}")
        for fid, v in self.embeddings.items():
            if not is_unit(v):
                raise IntegrityError(f"embedding of {fid} is not unit-normalized")
        seen: set[str] = set()
        for c in self.clusters:
            if c.member_count < 1:
                raise IntegrityError(f"cluster {c.cluster_id} is empty")
            if not is_unit(c.centroid):
                raise IntegrityError(f"cluster {c.cluster_id} centroid is not unit-normalized")
            for m in c.member_ids:
                if m not in self.facts:
                    raise IntegrityError(f"cluster {c.cluster_id} references unknown fact {m}")
                if m in seen:
                    raise IntegrityError(f"fact {m} belongs to more than one cluster")
                seen.add(m)
        if self.facts and seen != set(self.facts):
            missing = sorted(set(self.facts) - seen)[0]
            raise IntegrityError(f"fact {missing} belongs to no cluster")
        keys: set[tuple[str, str, str]] = set()
        for e in self.edges:
            label = f"{e.kind.value} edge {e.src}->{e.dst}"
            if e.src not in self.facts or e.dst not in self.facts:
                raise IntegrityError(f"{label} references a missing fact")
            if e.src == e.dst:
                raise IntegrityError(f"{label} is a self-loop")
            if e.kind == EdgeKind.SEMANTIC:
                if not e.src < e.dst:
                    raise IntegrityError(f"{label} is not stored canonically")
                if not -1.0 - 1e-9 <= e.score <= 1.0 + 1e-9:
                    raise IntegrityError(f"{label} has score {e.score} outside [-1, 1]")
            if not math.isfinite(e.score):
                raise IntegrityError(f"{label} has a non-finite score")
            if e.key in keys:
                raise IntegrityError(f"duplicate {label}")
            keys.add(e.key)
        return self


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    cluster_distance_threshold: float = 0.2
    semantic_edge_threshold: float = 0.3
    pmi_threshold: float = 0.8
    k_initial: int = 20
    k_counterfactual: int = 10
    graph_expansion_hops: int = 1
    max_context_facts: int = 40
    enable_reasoning: bool = True
    enable_causal_edges: bool = True
    enable_semantic_edges: bool = True

    def replace(self, **changes: Any) -> "EngineConfig":
        return validate_config(dataclasses.replace(self, **changes))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        return validate_config(cls(**dict(d)))


_INT_FIELDS = ("k_initial", "k_counterfactual", "graph_expansion_hops", "max_context_facts")
_BOOL_FIELDS = ("enable_reasoning", "enable_causal_edges", "enable_semantic_edges")


def validate_config(config: EngineConfig) -> EngineConfig:
    """Return ``config`` unchanged if every field invariant holds, else raise ConfigError."""
    for name in ("cluster_distance_threshold", "semantic_edge_threshold", "pmi_threshold"):
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(name, f"must be a finite real, got {value!r}")
    if not 0.0 <= config.cluster_distance_threshold <= 2.0:
        raise ConfigError("cluster_distance_threshold", "must lie in [0, 2]")
    if not -1.0 <= config.semantic_edge_threshold <= 1.0:
        raise ConfigError("semantic_edge_threshold", "must lie in [-1, 1]")
    if config.pmi_threshold < 0:
        raise ConfigError("pmi_threshold", "must be nonnegative")
    for name in _INT_FIELDS:
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigError(name, f"must be a nonnegative integer, got {value!r}")
    for name in _BOOL_FIELDS:
        if not isinstance(getattr(config, name), bool):
            raise ConfigError(name, "must be a boolean")
    return config
