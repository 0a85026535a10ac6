"""Deterministic offline providers.

* :class:`MockChat` -- scripted replies, optional rule-based heuristics per
  prompt type, and a stable hash-derived canned reply for anything else.
* :class:`HashEmbedder` -- pseudo-random unit vectors seeded by hashes.
* :class:`BigramScorer` -- an additively smoothed unigram/bigram language
  model over a fixed toy corpus, so NLL values can be checked by hand.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .. import prompts
from ..errors import ProviderRefusal
from .base import ChatRequest, ChatResult, EmbedResult, NllRequest, NllResult, request_hash

# -- chat --------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    reply: str
    task: str = "any"
    contains: tuple[str, ...] = ()
    refuse: bool = False

    def matches(self, task: str, user_content: str) -> bool:
        if self.task not in ("any", task):
            return False
        return all(c in user_content for c in self.contains)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScriptRule":
        contains = d.get("contains", ())
        if isinstance(contains, str):
            contains = (contains,)
        return cls(str(d.get("reply", "")), str(d.get("task", "any")), tuple(contains), bool(d.get("refuse", False)))


_SENTENCE_RE = re.compile(r"[^.!?]+[.!?]?")
_WORD_RE = re.compile(r"[A-Za-z0-9']+")
_PRONOUNS = [
    (re.compile(r"\bI'm\b"), "User is"),
    (re.compile(r"\bI am\b"), "User is"),
    (re.compile(r"\bI've\b"), "User has"),
    (re.compile(r"\bI'll\b"), "User will"),
    (re.compile(r"\bI'd\b"), "User would"),
    (re.compile(r"\bI\b"), "User"),
    (re.compile(r"\b[Mm]y\b"), "User's"),
    (re.compile(r"\b[Mm]e\b"), "User"),
    (re.compile(r"\b[Mm]yself\b"), "themselves"),
]


def _declarative(sentence: str) -> str:
    s = sentence.strip().strip('"')
    for pat, rep in _PRONOUNS:
        s = pat.sub(rep, s)
    s = s.rstrip("?!. ")
    return s[:1].upper() + s[1:] + "." if s else ""


def _heuristic_extract(user_content: str) -> str:
    user_line = user_content.split("\nAssistant:", 1)[0]
    if user_line.startswith("User:"):
        user_line = user_line[len("User:"):]
    facts = []
    for m in _SENTENCE_RE.finditer(user_line):
        sent = m.group(0).strip()
        if sent.endswith("?") or len(_WORD_RE.findall(sent)) < 4:
            continue
        fact = _declarative(sent)
        if fact:
            facts.append(fact)
    return "\n".join(facts)


def _numbered_facts(user_content: str) -> list[str]:
    return [m.group(1) for m in re.finditer(r"^\s*\d+\.\s+(.*)$", user_content, flags=re.M)]


def _token_f1(a: str, b: str) -> float:
    ta = Counter(w.lower() for w in _WORD_RE.findall(a))
    tb = Counter(w.lower() for w in _WORD_RE.findall(b))
    common = sum((ta & tb).values())
    if not common:
        return 0.0
    p = common / sum(ta.values())
    r = common / sum(tb.values())
    return 2 * p * r / (p + r)


def _heuristic(task: str, user_content: str) -> str | None:
    if task == "extract":
        return _heuristic_extract(user_content)
    if task == "causal":
        n = len(_numbered_facts(user_content))
        return "\n".join(f"{i} -> {i + 1}" for i in range(1, n))
    if task == "counterfactual":
        first = user_content.split("\n", 1)
        known = [ln[2:] for ln in (first[1].splitlines() if len(first) > 1 else []) if ln.startswith("- ")]
        lead = known[0] if known and not known[0].startswith("(") else "general safety concerns"
        return f"Acting on this request could conflict with what is known: {lead}"
    if task == "answer":
        ctx = [ln for ln in user_content.splitlines() if ln.startswith("- ")]
        basis = ctx[0][2:] if ctx else "no stored memory"
        return f"Considering your history ({basis}), here is my answer."
    if task == "judge":
        cand = re.search(r"^Candidate answer: (.*)$", user_content, flags=re.M | re.S)
        gold = re.search(r"^Reference answer: (.*?)\nCandidate answer:", user_content, flags=re.M | re.S)
        if not (cand and gold):
            return None
        score = round(100 * _token_f1(cand.group(1), gold.group(1)))
        return f"{'CORRECT' if score >= 30 else 'INCORRECT'} {score}"
    return None


class MockChat:
    """Deterministic chat provider.

    Lookup order: scripted rules (first match), then per-task heuristics when
    ``heuristics`` is on, then a canned reply derived from the request hash.
    """

    def __init__(self, rules: Iterable[ScriptRule | dict[str, Any]] = (), *, heuristics: bool = False, seed: int = 0):
        self.rules = [r if isinstance(r, ScriptRule) else ScriptRule.from_dict(r) for r in rules]
        self.heuristics = heuristics
        self.seed = seed

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "MockChat":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = data["rules"] if isinstance(data, dict) else data
        return cls(rules, **kwargs)

    def complete(self, request: ChatRequest) -> ChatResult:
        task = prompts.task_of(request.system_prompt)
        for rule in self.rules:
            if rule.matches(task, request.user_content):
                if rule.refuse:
                    raise ProviderRefusal(f"scripted refusal for task {task}")
                return ChatResult(rule.reply)
        if self.heuristics:
            reply = _heuristic(task, request.user_content)
            if reply is not None:
                return ChatResult(reply)
        digest = request_hash("chat", [self.seed, request.payload()])[:16]
        return ChatResult(f"mock reply {digest}")


# -- embeddings --------------------------------------------------------------

STOPWORDS = frozenset(
    """a about above after again all am an and any are as at be because been before being
    below between both but by can could did do does doing down during each few for from further
    had has have having he her here hers him his how i if in into is it its just let me more most
    my no nor not now of off on once only or other our out over own same she should so some such
    than that the their them then there these they this those through to too under until up very
    was we were what when where which while who whom why will with would you your user user's s
    im i'm ive i've""".split()
)


def content_tokens(text: str) -> list[str]:
    return [w for w in (t.lower() for t in _WORD_RE.findall(text)) if w not in STOPWORDS and len(w) > 1]


def _seed_of(*parts: Any) -> int:
    digest = hashlib.sha256(json.dumps(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class HashEmbedder:
    """Hash-seeded pseudo-random embeddings.

    ``mode="text"`` maps each distinct text to an independent random unit
    vector. ``mode="tokens"`` sums per-token random vectors over content words
    (plus a small whole-text component), so texts sharing vocabulary are
    similar -- enough lexical signal for realistic offline runs.
    """

    def __init__(self, dim: int = 256, seed: int = 0, mode: str = "tokens", text_weight: float = 0.1,
                 overrides: dict[str, Sequence[float]] | None = None):
        if mode not in ("text", "tokens"):
            raise ValueError(f"unknown embedding mode {mode!r}")
        self.dim = dim
        self.seed = seed
        self.mode = mode
        self.text_weight = text_weight
        self.overrides = {k: list(map(float, v)) for k, v in (overrides or {}).items()}
        self._vec = lru_cache(maxsize=65536)(self._vec_uncached)

    def _vec_uncached(self, kind: str, key: str) -> np.ndarray:
        rng = np.random.default_rng(_seed_of(self.seed, self.dim, kind, key))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def vector(self, text: str) -> np.ndarray:
        if text in self.overrides:
            v = np.asarray(self.overrides[text], dtype=np.float64)
            return v / np.linalg.norm(v)
        whole = self._vec("text", text)
        if self.mode == "text":
            return whole
        toks = content_tokens(text)
        if not toks:
            return whole
        v = np.zeros(self.dim)
        for t in toks:
            v += self._vec("token", t)
        v /= np.linalg.norm(v)
        v = v + self.text_weight * whole
        return v / np.linalg.norm(v)

    def embed_batch(self, texts: Sequence[str]) -> EmbedResult:
        return EmbedResult([self.vector(t).tolist() for t in texts])


# -- NLL scorer --------------------------------------------------------------

_LM_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def lm_tokens(text: str) -> list[str]:
    return _LM_TOKEN_RE.findall(text.lower())


def load_toy_corpus() -> list[str]:
    text = resources.files("causalmem").joinpath("data/toy_corpus.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


@dataclass
class BigramScorer:
    """Additively smoothed bigram LM, optionally mixed with a context-trigger model.

    With ``trigger_weight = 0`` (the default) every token is scored as::

        P(w | prev) = (count(prev, w) + alpha) / (count(prev, .) + alpha * V)

    falling back to the unigram ``(count(w) + alpha) / (N + alpha * V)`` when
    there is no previous token. ``V`` is the corpus vocabulary size plus one
    slot shared by all unseen tokens. Bigrams never cross sentence
    boundaries.

    A positive ``trigger_weight`` mixes in a sentence co-occurrence model
    conditioned on the context tokens, which lets the antecedent of a causal
    template influence every token of the target, not just the first.
    """

    corpus: Sequence[str]
    alpha: float = 1.0
    trigger_weight: float = 0.0
    unigrams: Counter = field(init=False)
    bigrams: dict[str, Counter] = field(init=False)
    cooc: dict[str, Counter] = field(init=False)
    n_tokens: int = field(init=False)
    vocab_size: int = field(init=False)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.trigger_weight <= 1.0:
            raise ValueError("trigger_weight must lie in [0, 1]")
        self.unigrams = Counter()
        self.bigrams = defaultdict(Counter)
        self.cooc = defaultdict(Counter)
        for sentence in self.corpus:
            toks = lm_tokens(sentence)
            self.unigrams.update(toks)
            for a, b in zip(toks, toks[1:]):
                self.bigrams[a][b] += 1
            present = sorted(set(toks))
            for a in present:
                for b in present:
                    if a != b:
                        self.cooc[a][b] += 1
        self.n_tokens = sum(self.unigrams.values())
        self.vocab_size = len(self.unigrams) + 1
        self._bigram_totals = {a: sum(c.values()) for a, c in self.bigrams.items()}
        self._cooc_totals = {a: sum(c.values()) for a, c in self.cooc.items()}

    @classmethod
    def toy(cls, **kwargs: Any) -> "BigramScorer":
        return cls(load_toy_corpus(), **kwargs)

    def unigram_prob(self, w: str) -> float:
        return (self.unigrams.get(w, 0) + self.alpha) / (self.n_tokens + self.alpha * self.vocab_size)

    def bigram_prob(self, w: str, prev: str | None) -> float:
        if prev is None:
            return self.unigram_prob(w)
        c = self.bigrams.get(prev)
        num = (c.get(w, 0) if c else 0) + self.alpha
        den = self._bigram_totals.get(prev, 0) + self.alpha * self.vocab_size
        return num / den

    def trigger_prob(self, w: str, context: Sequence[str]) -> float:
        ctx = sorted(set(context))
        if not ctx:
            return self.unigram_prob(w)
        num = sum(self.cooc[c].get(w, 0) for c in ctx if c in self.cooc) + self.alpha
        den = sum(self._cooc_totals.get(c, 0) for c in ctx) + self.alpha * self.vocab_size
        return num / den

    def token_prob(self, w: str, prev: str | None, context: Sequence[str]) -> float:
        p = self.bigram_prob(w, prev)
        if self.trigger_weight:
            p = (1.0 - self.trigger_weight) * p + self.trigger_weight * self.trigger_prob(w, context)
        return p

    def score(self, request: NllRequest) -> NllResult:
        ctx = lm_tokens(request.context_text)
        target = lm_tokens(request.target_text)
        prev = ctx[-1] if ctx else None
        total = 0.0
        for w in target:
            total -= math.log(self.token_prob(w, prev, ctx))
            prev = w
        return NllResult(total, len(target))
