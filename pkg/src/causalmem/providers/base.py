"""Provider interfaces and the :class:`ProviderSuite` every pipeline stage talks to."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np

from ..errors import DimensionMismatch, NonFiniteScore, ValidationError, ZeroVector
from ..model import ZERO_NORM

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def approx_token_count(text: str) -> int:
    """Whitespace+punctuation token count, used when a provider reports no usage."""
    return len(_TOKEN_RE.findall(text))


def request_hash(kind: str, payload: Any) -> str:
    blob = json.dumps([kind, payload], sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_content: str
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.user_content:
            raise ValidationError("chat request has empty user_content")

    def payload(self) -> dict[str, Any]:
        return {"system": self.system_prompt, "user": self.user_content, "temperature": self.temperature}


@dataclass(frozen=True)
class NllRequest:
    context_text: str
    target_text: str

    def __post_init__(self) -> None:
        if not self.target_text:
            raise ValidationError("nll request has empty target_text")

    def payload(self) -> dict[str, Any]:
        return {"context": self.context_text, "target": self.target_text}


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int
    approximate: bool


@dataclass(frozen=True)
class ChatResult:
    text: str
    usage: Usage | None = None


@dataclass(frozen=True)
class EmbedResult:
    vectors: list[list[float]]
    usage: Usage | None = None


@dataclass(frozen=True)
class NllResult:
    total: float  # summed token NLL in nats
    n_tokens: int
    usage: Usage | None = None

    @property
    def mean(self) -> float:
        return self.total / self.n_tokens if self.n_tokens else 0.0


@runtime_checkable
class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResult: ...


@runtime_checkable
class EmbeddingProvider(Protocol):
    def embed_batch(self, texts: Sequence[str]) -> EmbedResult: ...


@runtime_checkable
class NllScorer(Protocol):
    def score(self, request: NllRequest) -> NllResult: ...


@dataclass(frozen=True)
class CallRecord:
    call_id: str
    kind: str  # chat | embed | nll
    stage: str
    input_tokens: int
    output_tokens: int
    approximate: bool


@dataclass
class ProviderSuite:
    """Bundles the chat, embedding and scoring providers and logs every call.

    All pipeline code goes through ``chat``/``embed``/``nll`` here, which
    normalize embeddings, check dimensions and scores, and record token usage
    per stage.
    """

    chat_provider: ChatProvider
    embedder: EmbeddingProvider
    scorer: NllScorer
    max_in_flight: int = 8
    calls: list[CallRecord] = field(default_factory=list)
    _dim: int | None = field(default=None, init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def _record(self, kind: str, stage: str, payload: Any, usage: Usage | None, fallback_in: str, fallback_out: str) -> str:
        call_id = f"{kind}:{request_hash(kind, payload)[:12]}"
        if usage is None:
            usage = Usage(approx_token_count(fallback_in), approx_token_count(fallback_out), True)
        with self._lock:
            self.calls.append(CallRecord(call_id, kind, stage, usage.input_tokens, usage.output_tokens, usage.approximate))
        return call_id

    def fork(self) -> "ProviderSuite":
        """Same providers, fresh call log."""
        return ProviderSuite(self.chat_provider, self.embedder, self.scorer, self.max_in_flight)

    def mark(self) -> int:
        with self._lock:
            return len(self.calls)

    def calls_since(self, mark: int) -> list[CallRecord]:
        with self._lock:
            return list(self.calls[mark:])

    def chat(self, request: ChatRequest, stage: str = "chat") -> str:
        result = self.chat_provider.complete(request)
        self._record("chat", stage, request.payload(), result.usage,
                     request.system_prompt + "\n" + request.user_content, result.text)
        return result.text

    def chat_with_id(self, request: ChatRequest, stage: str = "chat") -> tuple[str, str]:
        result = self.chat_provider.complete(request)
        call_id = self._record("chat", stage, request.payload(), result.usage,
                               request.system_prompt + "\n" + request.user_content, result.text)
        return result.text, call_id

    def embed(self, texts: Sequence[str], stage: str = "embed") -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            raise ValidationError("embed() needs at least one text")
        if any(not t for t in texts):
            raise ValidationError("embed() received an empty string")
        result = self.embedder.embed_batch(texts)
        if len(result.vectors) != len(texts):
            raise DimensionMismatch(f"provider returned {len(result.vectors)} vectors for {len(texts)} texts")
        out = []
        for raw in result.vectors:
            v = np.asarray(raw, dtype=np.float64)
            if v.ndim != 1:
                raise DimensionMismatch(f"embedding has shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise DimensionMismatch("embedding has non-finite components")
            with self._lock:
                if self._dim is None:
                    self._dim = int(v.shape[0])
                elif v.shape[0] != self._dim:
                    raise DimensionMismatch(f"embedding dimension {v.shape[0]} != {self._dim}")
            n = float(np.linalg.norm(v))
            if n < ZERO_NORM:
                raise ZeroVector("provider returned a zero embedding")
            out.append(v / n)
        self._record("embed", stage, texts, result.usage, "\n".join(texts), "")
        return out

    def nll_result(self, request: NllRequest, stage: str = "nll") -> NllResult:
        result = self.scorer.score(request)
        if not math.isfinite(result.total) or result.total < 0:
            raise NonFiniteScore(f"scorer returned {result.total!r}")
        self._record("nll", stage, request.payload(), result.usage,
                     request.context_text + " " + request.target_text, "")
        logger.debug("nll total=%.6f mean=%.6f tokens=%d", result.total, result.mean, result.n_tokens)
        return result

    def nll(self, request: NllRequest, stage: str = "nll") -> float:
        return self.nll_result(request, stage).total
