"""On-disk store format.

A store is a directory::

    manifest.json    format version, build stage, counts, config snapshot
    facts.jsonl      one fact per line, chronological order
    embeddings.bin   header (magic, version, d, count) + row-major float32, fact_id order
    clusters.json    clusters sorted by id
    edges.jsonl      edges sorted by (kind, src, dst)

Writes go to a sibling temp directory that is swapped in with ``rename``.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CorruptFile, IntegrityError, IoError, SerializationError, ValidationError, VersionMismatch
from .model import Cluster, Edge, EdgeKind, EngineConfig, Fact, MemoryGraph, sort_edges

FORMAT_VERSION = 1
EMB_MAGIC = b"CMEB"
EMB_HEADER = struct.Struct("<4sIII")

FILES = ("manifest.json", "facts.jsonl", "embeddings.bin", "clusters.json", "edges.jsonl")


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def _write_text(path: Path, text: str) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def encode_embeddings(graph: MemoryGraph) -> bytes:
    ids, X = graph.matrix()
    d = X.shape[1] if ids else 0
    body = np.ascontiguousarray(X, dtype="<f4").tobytes() if ids else b""
    return EMB_HEADER.pack(EMB_MAGIC, FORMAT_VERSION, d, len(ids)) + body


def save_graph(graph: MemoryGraph, path: str | Path, *, config: EngineConfig | None = None,
               stage: str = "built") -> None:
    path = Path(path)
    try:
        graph.validate()
        manifest = {
            "format_version": FORMAT_VERSION,
            "stage": stage,
            "counts": {
                "facts": len(graph.facts),
                "clusters": len(graph.clusters),
                "semantic_edges": len(graph.edges_of(EdgeKind.SEMANTIC)),
                "causal_edges": len(graph.edges_of(EdgeKind.CAUSAL)),
            },
            "dim": graph.dim,
            "config": config.to_dict() if config is not None else None,
        }
        facts = "".join(dumps(f.to_dict()) + "\n" for f in graph.facts.values())
        clusters = dumps([c.to_dict() for c in sorted(graph.clusters, key=lambda c: c.cluster_id)]) + "\n"
        edges = "".join(dumps(e.to_dict()) + "\n" for e in sort_edges(graph.edges))
        emb = encode_embeddings(graph)
    except (TypeError, ValueError) as exc:
        raise SerializationError(f"cannot serialize graph: {exc}") from exc

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
        _write_text(tmp / "manifest.json", dumps(manifest) + "\n")
        _write_text(tmp / "facts.jsonl", facts)
        (tmp / "embeddings.bin").write_bytes(emb)
        _write_text(tmp / "clusters.json", clusters)
        _write_text(tmp / "edges.jsonl", edges)
        os.chmod(tmp, 0o755)
        if path.exists():
            old = path.with_name(f".{path.name}.old-{os.getpid()}")
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write store {path}: {exc}") from exc


def read_manifest(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise IoError(f"{path} is not a store (no manifest.json)")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise CorruptFile(str(mpath), "manifest", f"invalid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: store format version {version!r}, expected {FORMAT_VERSION}")
    return manifest


def _read_jsonl(path: Path, parse) -> list:
    out = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(parse(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptFile(str(path), f"line {lineno}", str(exc)) from exc
    return out


def decode_embeddings(path: Path, data: bytes) -> tuple[int, int, np.ndarray]:
    if len(data) < EMB_HEADER.size:
        raise CorruptFile(str(path), "header", "file shorter than header")
    magic, version, d, count = EMB_HEADER.unpack_from(data)
    if magic != EMB_MAGIC:
        raise CorruptFile(str(path), "header", f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: embeddings version {version}, expected {FORMAT_VERSION}")
    expected = EMB_HEADER.size + 4 * d * count
    if len(data) != expected:
        raise CorruptFile(str(path), f"byte {min(len(data), expected)}",
                          f"size {len(data)} does not match header (expected {expected})")
    X = np.frombuffer(data, dtype="<f4", offset=EMB_HEADER.size).reshape(count, d) if count else np.zeros((0, d), "<f4")
    if not np.all(np.isfinite(X)):
        row = int(np.argwhere(~np.isfinite(X))[0][0])
        raise CorruptFile(str(path), f"row {row}", "non-finite embedding component")
    return d, count, X.astype(np.float64)


def load_graph(path: str | Path) -> MemoryGraph:
    """Load and fully re-validate a store. Nothing is returned on any failure."""
    path = Path(path)
    manifest = read_manifest(path)
    for name in FILES:
        if not (path / name).exists():
            raise CorruptFile(str(path / name), "file", "missing")

    facts = _read_jsonl(path / "facts.jsonl", Fact.from_dict)
    edges = _read_jsonl(path / "edges.jsonl", Edge.from_dict)
    cpath = path / "clusters.json"
    try:
        clusters = [Cluster.from_dict(c) for c in json.loads(cpath.read_text(encoding="utf-8"))]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(str(cpath), "clusters", str(exc)) from exc

    epath = path / "embeddings.bin"
    _, count, X = decode_embeddings(epath, epath.read_bytes())
    fact_map: dict[str, Fact] = {}
    for f in facts:
        if f.fact_id in fact_map:
            raise IntegrityError(f"duplicate fact id {f.fact_id}")
        fact_map[f.fact_id] = f
    if count != len(fact_map):
        raise CorruptFile(str(epath), "header", f"{count} embeddings for {len(fact_map)} facts")
    embeddings = {fid: X[i] for i, fid in enumerate(sorted(fact_map))}

    for c in clusters:
        if c.member_count != len(set(c.member_ids)):
            raise IntegrityError(f"cluster {c.cluster_id} lists a member twice")
    graph = MemoryGraph(fact_map, embeddings, clusters, edges)
    try:
        graph.validate()
    except ValidationError as exc:
        raise IntegrityError(str(exc)) from exc
    cfg = manifest.get("config")
    if cfg and cfg.get("enable_causal_edges", True):
        tau = float(cfg.get("pmi_threshold", 0.0))
        for e in graph.edges_of(EdgeKind.CAUSAL):
            if not e.score > tau:
                raise IntegrityError(f"causal edge {e.src}->{e.dst} score {e.score} not above threshold {tau}")
    if cfg:
        tau = float(cfg.get("semantic_edge_threshold", -1.0))
        for e in graph.edges_of(EdgeKind.SEMANTIC):
            if not e.score > tau:
                raise IntegrityError(f"semantic edge {e.src}->{e.dst} score {e.score} not above threshold {tau}")
    return graph


def graphs_equal(a: MemoryGraph, b: MemoryGraph) -> bool:
    """Deep structural equality; embeddings compared at float32 precision."""
    if a.facts != b.facts or list(a.facts) != list(b.facts):
        return False
    if set(a.embeddings) != set(b.embeddings):
        return False
    for fid, v in a.embeddings.items():
        if not np.array_equal(np.asarray(v, dtype=np.float32), np.asarray(b.embeddings[fid], dtype=np.float32)):
            return False
    ca = sorted(a.clusters, key=lambda c: c.cluster_id)
    cb = sorted(b.clusters, key=lambda c: c.cluster_id)
    if len(ca) != len(cb):
        return False
    for x, y in zip(ca, cb):
        if (x.cluster_id, x.member_ids) != (y.cluster_id, y.member_ids):
            return False
        if not (np.array_equal(x.centroid, y.centroid) and np.array_equal(x.mean, y.mean)):
            return False
    ea = [(e.key, e.score) for e in sort_edges(a.edges)]
    eb = [(e.key, e.score) for e in sort_edges(b.edges)]
    return ea == eb


def store_digest(path: str | Path) -> dict[str, str]:
    """sha256 of every store file, for byte-identity checks."""
    path = Path(path)
    return {name: hashlib.sha256((path / name).read_bytes()).hexdigest() for name in FILES}


def save_json(obj: Any, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    _write_text(tmp, json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n")
    os.replace(tmp, path)
