"""Evaluation harness: evidence recall, LLM-judged QA accuracy, token and time counters."""

from __future__ import annotations

import json
import logging
import re
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import prompts
from .errors import MalformedReply, MemoryEngineError, UnresolvableEvidence, ValidationError
from .extraction import turn_from_dict, turn_to_dict
from .model import DialogueTurn, EngineConfig, MemoryGraph
from .persistence import dumps, save_json
from .pipeline import build, ingest
from .providers import CallRecord, ChatRequest, ProviderSuite
from .retrieval import RetrievalContext, answer_with_id, make_query, retrieve_context

logger = logging.getLogger(__name__)

DEFAULT_MATCH_THRESHOLD = 0.85

ABLATIONS: dict[str, dict[str, bool]] = {
    "reasoning": {"enable_reasoning": False},
    "causal": {"enable_causal_edges": False},
    "semantic": {"enable_semantic_edges": False},
}


@dataclass(frozen=True)
class Evidence:
    """Either a provenance locator (session, optional turn) or an evidence text."""

    session_id: str | None = None
    turn_index: int | None = None
    text: str | None = None

    @property
    def is_text(self) -> bool:
        return self.text is not None

    @classmethod
    def parse(cls, raw: Any) -> "Evidence":
        if isinstance(raw, str):
            return cls(text=raw)
        if isinstance(raw, Mapping):
            if raw.get("text"):
                return cls(text=str(raw["text"]))
            if raw.get("session_id") is not None:
                t = raw.get("turn_index")
                return cls(str(raw["session_id"]), None if t is None else int(t))
        raise ValidationError(f"cannot parse evidence locator {raw!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.is_text:
            return {"text": self.text}
        return {"session_id": self.session_id, "turn_index": self.turn_index}


@dataclass
class EvalSample:
    dialogue: list[DialogueTurn]
    question: str
    gold_answer: str
    gold_evidence: list[Evidence]
    sample_id: str = ""

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.gold_answer.strip():
            raise ValidationError(f"sample {self.sample_id!r}: question and answer must be nonempty")

    def check_evidence(self) -> None:
        if not self.dialogue:
            return
        turns = {t.key for t in self.dialogue}
        sessions = {t.session_id for t in self.dialogue}
        for ev in self.gold_evidence:
            if ev.is_text:
                continue
            if ev.session_id not in sessions or (ev.turn_index is not None and (ev.session_id, ev.turn_index) not in turns):
                raise UnresolvableEvidence(f"sample {self.sample_id!r}: evidence {ev.to_dict()} not in dialogue")


# -- retrieval accuracy --------------------------------------------------------


def evidence_coverage(context: RetrievalContext, gold: Sequence[Evidence], *, graph: MemoryGraph | None = None,
                      suite: ProviderSuite | None = None,
                      match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> tuple[int, int]:
    """(matched, total) gold evidence items against the facts of the final context."""
    if not gold:
        raise ValidationError("retrieval accuracy needs at least one evidence item")
    facts = [i for i in context.final if i.kind == "fact"]
    text_items = [ev for ev in gold if ev.is_text]
    ev_vectors: dict[str, np.ndarray] = {}
    if text_items and facts:
        if graph is None or suite is None:
            raise UnresolvableEvidence("text evidence needs the graph embeddings and an embedding provider")
        texts = sorted({ev.text for ev in text_items})
        ev_vectors = dict(zip(texts, suite.embed(texts, stage="eval_evidence")))
    hit = 0
    for ev in gold:
        if ev.is_text:
            v = ev_vectors.get(ev.text)
            ok = v is not None and any(float(np.dot(graph.embeddings[i.fact_id], v)) >= match_threshold for i in facts)
        else:
            ok = any(i.session_id == ev.session_id and (ev.turn_index is None or i.turn == ev.turn_index)
                     for i in facts)
        hit += ok
    return hit, len(gold)


def retrieval_accuracy(context: RetrievalContext, gold: Sequence[Evidence], *, graph: MemoryGraph | None = None,
                       suite: ProviderSuite | None = None,
                       match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> float:
    """Fraction of gold evidence items matched by at least one fact in the final context."""
    hit, total = evidence_coverage(context, gold, graph=graph, suite=suite, match_threshold=match_threshold)
    return hit / total


# -- judge ---------------------------------------------------------------------

_VERDICT_RE = re.compile(r"^\s*(CORRECT|INCORRECT)\b[\s:,-]*(\d{1,3})\s*$")


@dataclass(frozen=True)
class Judgement:
    correct: bool | None
    score: float | None
    raw: str = ""

    @property
    def judged(self) -> bool:
        return self.correct is not None


def parse_verdict(reply: str) -> tuple[bool, float]:
    """``CORRECT 95`` / ``INCORRECT 10``; the score may sit on the next line."""
    lines = [ln.strip() for ln in reply.strip().splitlines() if ln.strip()]
    candidates = lines[:1]
    if len(lines) >= 2:
        candidates.append(lines[0] + " " + lines[1])
    for text in candidates:
        m = _VERDICT_RE.match(text)
        if m and int(m.group(2)) <= 100:
            return m.group(1) == "CORRECT", int(m.group(2)) / 100.0
    raise MalformedReply("judge reply does not follow 'CORRECT|INCORRECT <0-100>'", reply)


def qa_accuracy(answer: str, gold_answer: str, question: str, judge: ProviderSuite) -> Judgement:
    request = ChatRequest(prompts.JUDGE_SYSTEM, prompts.judge_user(question, gold_answer, answer))
    reply = judge.chat(request, stage="judge")
    try:
        correct, score = parse_verdict(reply)
    except MalformedReply:
        logger.warning("unparsable judge reply %r", reply[:80])
        return Judgement(None, None, reply)
    return Judgement(correct, score, reply)


# -- reports -------------------------------------------------------------------


def token_summary(calls: Sequence[CallRecord]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = defaultdict(lambda: {"calls": 0, "input_tokens": 0, "output_tokens": 0,
                                                          "approximate": False})
    for c in calls:
        s = out[c.stage]
        s["calls"] += 1
        s["input_tokens"] += c.input_tokens
        s["output_tokens"] += c.output_tokens
        s["approximate"] = s["approximate"] or c.approximate
    return {k: out[k] for k in sorted(out)}


def _merge_tokens(parts: Sequence[Mapping[str, Mapping[str, Any]]]) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for part in parts:
        for stage, s in part.items():
            t = out.setdefault(stage, {"calls": 0, "input_tokens": 0, "output_tokens": 0, "approximate": False})
            t["calls"] += s["calls"]
            t["input_tokens"] += s["input_tokens"]
            t["output_tokens"] += s["output_tokens"]
            t["approximate"] = t["approximate"] or s["approximate"]
    return {k: out[k] for k in sorted(out)}


@dataclass
class SampleResult:
    sample_id: str
    evidence: tuple[int, int] | None = None  # (matched, total)
    correct: bool | None = None
    score: float | None = None
    answer: str = ""
    context: list[str] = field(default_factory=list)
    tokens: dict[str, dict[str, Any]] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def judged(self) -> bool:
        return self.correct is not None

    @property
    def retrieval_accuracy(self) -> float | None:
        return None if self.evidence is None else self.evidence[0] / self.evidence[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "retrieval_accuracy": self.retrieval_accuracy,
            "evidence_matched": None if self.evidence is None else self.evidence[0],
            "evidence_total": None if self.evidence is None else self.evidence[1],
            "judged": self.judged,
            "correct": self.correct,
            "score": self.score,
            "answer": self.answer,
            "context": self.context,
            "tokens": self.tokens,
            "error": self.error,
        }


@dataclass
class ReportRow:
    variant: str
    config: EngineConfig
    samples: list[SampleResult]

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def judged(self) -> int:
        return sum(1 for s in self.samples if s.judged)

    @property
    def unjudged(self) -> int:
        return self.n - self.judged

    @property
    def failed(self) -> int:
        return sum(1 for s in self.samples if s.error)

    # means are accumulated as exact rationals and rounded once

    @property
    def retrieval_accuracy(self) -> float | None:
        vals = [Fraction(*s.evidence) for s in self.samples if s.evidence is not None]
        return float(sum(vals, Fraction(0)) / len(vals)) if vals else None

    @property
    def qa_accuracy(self) -> float | None:
        judged = [s for s in self.samples if s.judged]
        return sum(1 for s in judged if s.correct) / len(judged) if judged else None

    @property
    def qa_score(self) -> float | None:
        judged = [Fraction(s.score).limit_denominator(100) for s in self.samples if s.judged]
        return float(sum(judged, Fraction(0)) / len(judged)) if judged else None

    @property
    def tokens(self) -> dict[str, dict[str, Any]]:
        return _merge_tokens([s.tokens for s in self.samples])

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "config": self.config.to_dict(),
            "n_samples": self.n,
            "retrieval_accuracy": self.retrieval_accuracy,
            "qa_accuracy": self.qa_accuracy if self.qa_accuracy is not None else "n/a",
            "qa_score_mean": self.qa_score,
            "judged": self.judged,
            "unjudged": self.unjudged,
            "failed": self.failed,
            "tokens": self.tokens,
            "samples": [s.to_dict() for s in self.samples],
        }


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}"


@dataclass
class EvalReport:
    rows: list[ReportRow]

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def timings(self) -> dict[str, Any]:
        return {r.variant: {s.sample_id: s.timings for s in r.samples} for r in self.rows}

    def to_markdown(self) -> str:
        head = ("| variant | samples | retrieval acc. (%) | QA acc. (%) | judged | unjudged | failed "
                "| input tokens | output tokens |")
        lines = [head, "|" + "---|" * 9]
        for r in self.rows:
            tok = r.tokens
            tin = sum(s["input_tokens"] for s in tok.values())
            tout = sum(s["output_tokens"] for s in tok.values())
            approx = "~" if any(s["approximate"] for s in tok.values()) else ""
            lines.append(f"| {r.variant} | {r.n} | {_pct(r.retrieval_accuracy)} | {_pct(r.qa_accuracy)} "
                         f"| {r.judged} | {r.unjudged} | {r.failed} | {approx}{tin} | {approx}{tout} |")
        if any(s["approximate"] for r in self.rows for s in r.tokens.values()):
            lines.append("")
            lines.append("~ token counts approximated by a whitespace+punctuation tokenizer")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "report.md").write_text(self.to_markdown(), encoding="utf-8")
        save_json(self.timings(), out / "timings.json")


# -- runner --------------------------------------------------------------------


def variants(ablations: Sequence[str], config: EngineConfig) -> list[tuple[str, EngineConfig]]:
    out = [("full", config)]
    for name in ablations:
        if name not in ABLATIONS:
            raise ValidationError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        out.append((f"w/o {name}", config.replace(**ABLATIONS[name])))
    return out


class _GraphCache:
    """Ingest once per sample, build once per (sample, edge settings).

    Within one variant each sample is handled by exactly one worker, and
    variants run one after another, so entries are never written concurrently.
    """

    def __init__(self, suite: ProviderSuite):
        self.suite = suite
        self.ingested: dict[str, tuple[MemoryGraph, list[CallRecord], float]] = {}
        self.built: dict[tuple, MemoryGraph] = {}

    def get(self, sample: EvalSample, config: EngineConfig, suite: ProviderSuite,
            timings: dict[str, float]) -> tuple[MemoryGraph, list[CallRecord]]:
        key = sample.sample_id
        if key not in self.ingested:
            local = self.suite.fork()
            t0 = time.perf_counter()
            graph = ingest(sample.dialogue, config, local)
            self.ingested[key] = (graph, local.calls, time.perf_counter() - t0)
        graph, ingest_calls, elapsed = self.ingested[key]
        timings["ingest"] = elapsed
        bkey = (key, config.enable_semantic_edges, config.enable_causal_edges, config.semantic_edge_threshold,
                config.pmi_threshold)
        if bkey not in self.built:
            t0 = time.perf_counter()
            self.built[bkey] = build(graph, config, suite)
            timings["build"] = time.perf_counter() - t0
        return self.built[bkey], ingest_calls


def evaluate_sample(sample: EvalSample, graph: MemoryGraph, config: EngineConfig, suite: ProviderSuite,
                    judge: ProviderSuite, *, match_threshold: float = DEFAULT_MATCH_THRESHOLD,
                    timings: dict[str, float] | None = None) -> SampleResult:
    timings = timings if timings is not None else {}
    result = SampleResult(sample.sample_id, timings=timings)
    t0 = time.perf_counter()
    if graph.facts:
        q = make_query(sample.question, suite)
        context = retrieve_context(q, graph, config, suite)
        timings["retrieve"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        result.answer, _ = answer_with_id(q, context, suite)
    else:
        context = RetrievalContext()
        result.answer = suite.chat(ChatRequest(prompts.ANSWER_SYSTEM, prompts.answer_user(sample.question, [])),
                                   stage="answer")
    timings["answer"] = time.perf_counter() - t0
    result.context = [i.fact_id if i.kind == "fact" else "<knowledge>" for i in context.final]
    if sample.gold_evidence:
        result.evidence = evidence_coverage(context, sample.gold_evidence, graph=graph, suite=suite,
                                            match_threshold=match_threshold)
    t0 = time.perf_counter()
    verdict = qa_accuracy(result.answer, sample.gold_answer, sample.question, judge)
    timings["judge"] = time.perf_counter() - t0
    result.correct, result.score = verdict.correct, verdict.score
    return result


def run_eval(samples: Sequence[EvalSample], config: EngineConfig, suite: ProviderSuite, *,
             judge: ProviderSuite | None = None, ablations: Sequence[str] = (),
             default_graph: MemoryGraph | None = None,
             match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> EvalReport:
    """Evaluate every sample under the full config and each requested ablation.

    Samples without a dialogue are answered from ``default_graph``. A failing
    sample is reported with its error and counted as unjudged.
    """
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique")
    for s in samples:
        s.check_evidence()
    cache = _GraphCache(suite)
    rows = []
    for name, cfg in variants(ablations, config):

        def one(sample: EvalSample, cfg: EngineConfig = cfg) -> SampleResult:
            local = suite.fork()
            local_judge = judge.fork() if judge is not None else local
            timings: dict[str, float] = {}
            shared: list[CallRecord] = []
            try:
                if sample.dialogue:
                    graph, shared = cache.get(sample, cfg, local, timings)
                else:
                    graph = default_graph if default_graph is not None else MemoryGraph()
                res = evaluate_sample(sample, graph, cfg, local, local_judge, match_threshold=match_threshold,
                                      timings=timings)
            except MemoryEngineError as exc:
                logger.warning("sample %s failed: %s", sample.sample_id, exc)
                res = SampleResult(sample.sample_id, timings=timings, error=f"{type(exc).__name__}: {exc}")
            calls = list(shared) + local.calls + (local_judge.calls if local_judge is not local else [])
            res.tokens = token_summary(calls)
            return res

        with ThreadPoolExecutor(max_workers=max(1, min(len(samples), suite.max_in_flight))) as pool:
            results = list(pool.map(one, samples)) if samples else []
        rows.append(ReportRow(name, cfg, results))
    return EvalReport(rows)


# -- sample files ----------------------------------------------------------------


def sample_from_dict(d: Mapping[str, Any], index: int) -> EvalSample:
    dialogue = [turn_from_dict(t) for t in d.get("dialogue") or []]
    evidence = [Evidence.parse(e) for e in d.get("evidence") or []]
    return EvalSample(dialogue, str(d["question"]), str(d["answer"]), evidence,
                      str(d.get("sample_id") or d.get("id") or f"sample-{index:04d}"))


def longmemeval_to_sample(d: Mapping[str, Any], index: int) -> EvalSample:
    """Convert one LongMemEval record (haystack sessions of role/content messages)."""
    turns: list[DialogueTurn] = []
    evidence: list[Evidence] = []
    session_ids = d.get("haystack_session_ids") or [f"s{i}" for i in range(len(d["haystack_sessions"]))]
    for sid, session in zip(session_ids, d["haystack_sessions"]):
        t = 0
        pending_user: str | None = None
        flagged = False

        def flush(assistant: str) -> None:
            nonlocal t, pending_user, flagged
            if pending_user is not None and pending_user.strip():
                turns.append(DialogueTurn(str(sid), t, pending_user, assistant))
                if flagged:
                    evidence.append(Evidence(str(sid), t))
                t += 1
            pending_user, flagged = None, False

        for msg in session:
            if msg.get("role") == "user":
                flush("")
                pending_user = str(msg.get("content", ""))
                flagged = bool(msg.get("has_answer"))
            else:
                flagged = flagged or bool(msg.get("has_answer"))
                flush(str(msg.get("content", "")))
        flush("")
    if not evidence:
        evidence = [Evidence(str(s)) for s in d.get("answer_session_ids") or []]
    return EvalSample(turns, str(d["question"]), str(d["answer"]), evidence,
                      str(d.get("question_id") or f"sample-{index:04d}"))


def load_samples(path: str | Path) -> list[EvalSample]:
    """Read samples from JSONL (native keys) or a LongMemEval JSON array."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    records: list[Any]
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    except ValueError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    out = []
    for i, rec in enumerate(records):
        try:
            if "haystack_sessions" in rec:
                out.append(longmemeval_to_sample(rec, i))
            else:
                out.append(sample_from_dict(rec, i))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: record {i}: {exc}") from exc
    return out


def write_samples(samples: Sequence[EvalSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps({
                "sample_id": s.sample_id,
                "dialogue": [turn_to_dict(t) for t in s.dialogue],
                "question": s.question,
                "answer": s.gold_answer,
                "evidence": [e.to_dict() for e in s.gold_evidence],
            }) + "\n")
