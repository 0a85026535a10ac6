"""Model providers: chat completion, text embedding and NLL scoring."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .base import (
    CallRecord,
    ChatProvider,
    ChatRequest,
    ChatResult,
    EmbeddingProvider,
    EmbedResult,
    NllRequest,
    NllResult,
    NllScorer,
    ProviderSuite,
    Usage,
    approx_token_count,
)
from .http import HttpSettings, http_providers
from .mock import BigramScorer, HashEmbedder, MockChat, ScriptRule
from .replay import Cassette, RecordingProvider, ReplayProvider


def mock_suite(seed: int = 0, *, rules=(), heuristics: bool = True, dim: int = 256,
               embed_mode: str = "tokens", trigger_weight: float = 0.5, max_in_flight: int = 8) -> ProviderSuite:
    """Fully offline, deterministic providers."""
    return ProviderSuite(
        MockChat(rules, heuristics=heuristics, seed=seed),
        HashEmbedder(dim=dim, seed=seed, mode=embed_mode),
        BigramScorer.toy(trigger_weight=trigger_weight),
        max_in_flight=max_in_flight,
    )


def build_suite(kind: str, *, seed: int = 0, cassette: str | Path | None = None,
                record: str | Path | None = None, settings: Mapping[str, Any] | None = None,
                script: str | Path | None = None) -> ProviderSuite:
    """Construct a suite for the CLI: ``mock``, ``http`` or ``replay``.

    ``record`` wraps whichever providers are built so every exchange lands in
    a cassette.
    """
    settings = dict(settings or {})
    if kind == "mock":
        rules = MockChat.from_file(script).rules if script else ()
        suite = mock_suite(seed, rules=rules, dim=int(settings.get("mock_dim", 256)))
    elif kind == "http":
        http_fields = {k: v for k, v in settings.items() if k in HttpSettings.__dataclass_fields__}
        hs = HttpSettings.from_env(http_fields)
        chat, emb, scorer = http_providers(hs)
        suite = ProviderSuite(chat, emb, scorer, max_in_flight=hs.max_in_flight)
    elif kind == "replay":
        if cassette is None:
            raise ValueError("replay provider needs a cassette path")
        rp = ReplayProvider(Cassette(cassette))
        suite = ProviderSuite(rp, rp, rp)
    else:
        raise ValueError(f"unknown provider {kind!r}")
    if record is not None:
        rec = RecordingProvider(Cassette(record), suite.chat_provider, suite.embedder, suite.scorer)
        suite = ProviderSuite(rec, rec, rec, max_in_flight=suite.max_in_flight)
    return suite


__all__ = [
    "BigramScorer", "CallRecord", "Cassette", "ChatProvider", "ChatRequest", "ChatResult",
    "EmbeddingProvider", "EmbedResult", "HashEmbedder", "HttpSettings", "MockChat", "NllRequest",
    "NllResult", "NllScorer", "ProviderSuite", "RecordingProvider", "ReplayProvider", "ScriptRule",
    "Usage", "approx_token_count", "build_suite", "http_providers", "mock_suite",
]
