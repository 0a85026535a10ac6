"""OpenAI-compatible HTTP providers.

Chat uses ``POST {base}/chat/completions``, embeddings ``POST {base}/embeddings``.
NLL scoring uses the legacy ``POST {base}/completions`` endpoint with
``echo=true, max_tokens=0, logprobs=0`` (served by vLLM and similar), summing
the negated log-probabilities of the tokens that fall inside the target span.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx

from ..errors import ProviderRefusal, TransportError
from .base import ChatRequest, ChatResult, EmbedResult, NllRequest, NllResult, Usage

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class HttpSettings:
    api_base: str = "https://api.openai.com/v1"
    api_key: str = ""
    chat_model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-small"
    score_model: str = "gpt2-large"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 8

    @classmethod
    def from_env(cls, overrides: Mapping[str, Any] | None = None, environ: Mapping[str, str] | None = None) -> "HttpSettings":
        """Config-file values first, then ACTMEM_* environment variables on top.

        The API key is only ever read from the environment.
        """
        env = os.environ if environ is None else environ
        values: dict[str, Any] = dict(overrides or {})
        values.pop("api_key", None)
        for field_name, var in (
            ("api_base", "ACTMEM_API_BASE"),
            ("chat_model", "ACTMEM_CHAT_MODEL"),
            ("embed_model", "ACTMEM_EMBED_MODEL"),
            ("score_model", "ACTMEM_SCORE_MODEL"),
        ):
            if env.get(var):
                values[field_name] = env[var]
        values["api_key"] = env.get("ACTMEM_API_KEY", "")
        return cls(**values)


class HttpClient:
    """Retrying JSON-over-HTTP client shared by the three providers."""

    def __init__(self, settings: HttpSettings, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        self.settings = settings
        headers = {"Content-Type": "application/json"}
        if settings.api_key:
            headers["Authorization"] = f"Bearer {settings.api_key}"
        self._client = httpx.Client(base_url=settings.api_base.rstrip("/") + "/", headers=headers,
                                    timeout=settings.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(max(1, settings.max_in_flight))
        self._sleep = sleep
        self.attempts = 0

    def post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(self.settings.max_attempts):
            if attempt:
                self._sleep(self.settings.backoff * (2 ** (attempt - 1)))
            self.attempts += 1
            try:
                with self._slots:
                    resp = self._client.post(path.lstrip("/"), json=body)
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("POST %s failed (attempt %d): %s", path, attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = TransportError(f"HTTP {resp.status_code} from {path}")
                logger.warning("POST %s returned %d (attempt %d)", path, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProviderRefusal(f"HTTP {resp.status_code} from {path}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise TransportError(f"non-JSON response from {path}") from exc
        raise TransportError(f"POST {path} failed after {self.settings.max_attempts} attempts: {last}")

    def close(self) -> None:
        self._client.close()


def _usage(payload: Mapping[str, Any]) -> Usage | None:
    u = payload.get("usage")
    if not isinstance(u, Mapping) or "prompt_tokens" not in u:
        return None
    return Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)), False)


class HttpChat:
    def __init__(self, client: HttpClient):
        self.client = client

    def complete(self, request: ChatRequest) -> ChatResult:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_content})
        body = {"model": self.client.settings.chat_model, "messages": messages, "temperature": request.temperature}
        payload = self.client.post("chat/completions", body)
        try:
            choice = payload["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError("chat response has no choices") from exc
        if choice.get("finish_reason") == "content_filter":
            raise ProviderRefusal("chat completion blocked by content filter")
        message = choice.get("message") or {}
        if message.get("refusal"):
            raise ProviderRefusal(str(message["refusal"]))
        return ChatResult(str(message.get("content") or ""), _usage(payload))


class HttpEmbedder:
    def __init__(self, client: HttpClient):
        self.client = client

    def embed_batch(self, texts: Sequence[str]) -> EmbedResult:
        body = {"model": self.client.settings.embed_model, "input": list(texts)}
        payload = self.client.post("embeddings", body)
        try:
            rows = sorted(payload["data"], key=lambda r: r.get("index", 0))
            vectors = [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError("malformed embeddings response") from exc
        return EmbedResult(vectors, _usage(payload))


class HttpScorer:
    def __init__(self, client: HttpClient):
        self.client = client

    def score(self, request: NllRequest) -> NllResult:
        prefix = request.context_text + " " if request.context_text else ""
        body = {
            "model": self.client.settings.score_model,
            "prompt": prefix + request.target_text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        payload = self.client.post("completions", body)
        try:
            lp = payload["choices"][0]["logprobs"]
            offsets, values = lp["text_offset"], lp["token_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError("completions response carries no echoed logprobs") from exc
        # a token straddling the boundary belongs to the target
        start = len(prefix.rstrip())
        total, n = 0.0, 0
        for off, value in zip(offsets, values):
            if off < start or value is None:
                continue
            total -= float(value)
            n += 1
        return NllResult(total, n, _usage(payload))


def http_providers(settings: HttpSettings, transport: httpx.BaseTransport | None = None):
    client = HttpClient(settings, transport=transport)
    return HttpChat(client), HttpEmbedder(client), HttpScorer(client)
