"""Record/replay cassettes: every provider request/response pair as one JSONL line."""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Sequence

from ..errors import ReplayMiss
from .base import (
    ChatRequest,
    ChatResult,
    EmbedResult,
    NllRequest,
    NllResult,
    Usage,
    request_hash,
)


def _usage_dict(u: Usage | None) -> dict[str, Any] | None:
    return None if u is None else {"input_tokens": u.input_tokens, "output_tokens": u.output_tokens,
                                   "approximate": u.approximate}


def _usage_obj(d: dict[str, Any] | None) -> Usage | None:
    return None if not d else Usage(int(d["input_tokens"]), int(d["output_tokens"]), bool(d["approximate"]))


class Cassette:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    self._entries.setdefault(entry["key"], entry)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, kind: str, payload: Any) -> dict[str, Any]:
        key = request_hash(kind, payload)
        try:
            return self._entries[key]["response"]
        except KeyError:
            raise ReplayMiss(f"cassette {self.path} has no {kind} call {key[:12]}") from None

    def record(self, kind: str, payload: Any, response: dict[str, Any]) -> None:
        key = request_hash(kind, payload)
        with self._lock:
            if key in self._entries:
                return
            entry = {"key": key, "kind": kind, "request": payload, "response": response}
            self._entries[key] = entry
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")


class ReplayProvider:
    """Serves chat, embedding and scoring calls from a cassette; misses raise ReplayMiss."""

    def __init__(self, cassette: Cassette):
        self.cassette = cassette

    def complete(self, request: ChatRequest) -> ChatResult:
        r = self.cassette.lookup("chat", request.payload())
        return ChatResult(r["text"], _usage_obj(r.get("usage")))

    def embed_batch(self, texts: Sequence[str]) -> EmbedResult:
        r = self.cassette.lookup("embed", list(texts))
        return EmbedResult(r["vectors"], _usage_obj(r.get("usage")))

    def score(self, request: NllRequest) -> NllResult:
        r = self.cassette.lookup("nll", request.payload())
        return NllResult(float(r["total"]), int(r["n_tokens"]), _usage_obj(r.get("usage")))


class RecordingProvider:
    """Forwards calls to real providers and appends each exchange to a cassette."""

    def __init__(self, cassette: Cassette, chat, embedder, scorer):
        self.cassette = cassette
        self.chat, self.embedder, self.scorer = chat, embedder, scorer

    def complete(self, request: ChatRequest) -> ChatResult:
        result = self.chat.complete(request)
        self.cassette.record("chat", request.payload(), {"text": result.text, "usage": _usage_dict(result.usage)})
        return result

    def embed_batch(self, texts: Sequence[str]) -> EmbedResult:
        result = self.embedder.embed_batch(texts)
        self.cassette.record("embed", list(texts), {"vectors": result.vectors, "usage": _usage_dict(result.usage)})
        return result

    def score(self, request: NllRequest) -> NllResult:
        result = self.scorer.score(request)
        self.cassette.record("nll", request.payload(),
                             {"total": result.total, "n_tokens": result.n_tokens, "usage": _usage_dict(result.usage)})
        return result
