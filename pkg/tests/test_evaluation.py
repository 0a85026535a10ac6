from __future__ import annotations

import json

import pytest

from causalmem import prompts
from causalmem.errors import MalformedReply, UnresolvableEvidence, ValidationError
from causalmem.evaluation import (
    EvalSample,
    Evidence,
    load_samples,
    parse_verdict,
    qa_accuracy,
    retrieval_accuracy,
    run_eval,
    token_summary,
    write_samples,
)
from causalmem.model import Cluster, DialogueTurn, EngineConfig, Fact, MemoryGraph
from causalmem.providers import CallRecord, ScriptRule, mock_suite
from causalmem.retrieval import RetrievalContext, assemble_context

from helpers import turns


def _ctx(facts, knowledge=""):
    return assemble_context(facts, knowledge, [], 40)


def test_retrieval_accuracy_locators():
    f = [Fact.create("a fact", "s1", 0, 0), Fact.create("b fact", "s1", 2, 0), Fact.create("c fact", "s2", 5, 0)]
    ctx = _ctx(f, "knowledge")
    gold = [Evidence("s1", 0), Evidence("s1", 1), Evidence("s2"), Evidence("s3")]
    assert retrieval_accuracy(ctx, gold) == 2 / 4
    assert retrieval_accuracy(ctx, [Evidence("s1", 2)]) == 1.0
    assert retrieval_accuracy(RetrievalContext(), [Evidence("s1")]) == 0.0
    with pytest.raises(ValidationError):
        retrieval_accuracy(ctx, [])


def test_retrieval_accuracy_text_evidence():
    suite = mock_suite()
    facts = [Fact.create("User's puppy chews shoes.", "s", 0, 0), Fact.create("User visited Narva.", "s", 1, 0)]
    vecs = suite.embed([x.text for x in facts])
    g = MemoryGraph({x.fact_id: x for x in facts}, {x.fact_id: v for x, v in zip(facts, vecs)},
                    [Cluster(0, tuple(x.fact_id for x in facts), vecs[0], vecs[0])], [])
    ctx = _ctx(facts[:1])
    gold = [Evidence(text="User's puppy chews shoes."), Evidence(text="User visited Narva.")]
    assert retrieval_accuracy(ctx, gold, graph=g, suite=suite) == 0.5
    with pytest.raises(UnresolvableEvidence):
        retrieval_accuracy(ctx, gold)


def test_evidence_parse():
    assert Evidence.parse("text") == Evidence(text="text")
    assert Evidence.parse({"session_id": "s", "turn_index": 2}) == Evidence("s", 2)
    assert Evidence.parse({"session_id": "s"}) == Evidence("s")
    with pytest.raises(ValidationError):
        Evidence.parse({"nothing": 1})


@pytest.mark.parametrize("reply,expected", [
    ("CORRECT 95", (True, 0.95)), ("INCORRECT 10", (False, 0.10)), ("CORRECT: 100", (True, 1.0)),
    ("INCORRECT\n0", (False, 0.0)), ("  CORRECT 7  \nbecause", (True, 0.07)),
])
def test_parse_verdict(reply, expected):
    assert parse_verdict(reply) == expected


@pytest.mark.parametrize("reply", ["correct 90", "CORRECT", "CORRECT 101", "MAYBE 50", "", "CORRECTLY 90"])
def test_parse_verdict_rejects(reply):
    with pytest.raises(MalformedReply):
        parse_verdict(reply)


def test_unparsable_judge_is_unjudged():
    judge = mock_suite(rules=[ScriptRule("I think so", task="judge")])
    j = qa_accuracy("a", "b", "q", judge)
    assert not j.judged and j.raw == "I think so"
    req = prompts.judge_user("q", "gold", "cand")
    assert req == "Question: q\nReference answer: gold\nCandidate answer: cand"


def test_token_summary():
    calls = [CallRecord("chat:1", "chat", "answer", 10, 2, False), CallRecord("chat:2", "chat", "answer", 5, 1, True),
             CallRecord("embed:1", "embed", "query", 3, 0, True)]
    assert token_summary(calls) == {
        "answer": {"calls": 2, "input_tokens": 15, "output_tokens": 3, "approximate": True},
        "query": {"calls": 1, "input_tokens": 3, "output_tokens": 0, "approximate": True},
    }


def _sample(i, text="User owns a small brown dog named Rex.", evidence=None):
    return EvalSample(turns(text, session=f"s{i}"), "What dog does the user own?", "a small brown dog named Rex",
                      evidence or [Evidence(f"s{i}", 0)], f"q{i}")


def test_run_eval_rows_and_ablations():
    suite = mock_suite()
    report = run_eval([_sample(0), _sample(1)], EngineConfig(), suite, ablations=["reasoning", "causal", "semantic"])
    assert [r.variant for r in report.rows] == ["full", "w/o reasoning", "w/o causal", "w/o semantic"]
    assert not report.rows[1].config.enable_reasoning
    assert not report.rows[2].config.enable_causal_edges
    assert not report.rows[3].config.enable_semantic_edges
    for r in report.rows:
        assert r.n == 2 and r.retrieval_accuracy == 1.0
    no_reason = report.rows[1].samples[0].tokens
    assert "counterfactual" not in no_reason and "counterfactual" in report.rows[0].samples[0].tokens
    assert "extract" in no_reason  # ingest calls are attributed to every variant


def test_run_eval_sample_failure_is_unjudged():
    bad = EvalSample([DialogueTurn("s", 0, "hello there my friend")], "q?", "a", [Evidence("s", 0)], "bad")
    suite = mock_suite(rules=[ScriptRule("", task="answer", refuse=True)])
    report = run_eval([bad], EngineConfig(), suite)
    row = report.rows[0]
    assert row.failed == 1 and row.unjudged == 1 and row.qa_accuracy is None
    assert row.to_dict()["qa_accuracy"] == "n/a"
    assert "ProviderRefusal" in row.samples[0].error


def test_unresolvable_evidence_rejected():
    s = _sample(0, evidence=[Evidence("nope", 0)])
    with pytest.raises(UnresolvableEvidence):
        run_eval([s], EngineConfig(), mock_suite())


def test_duplicate_sample_ids_rejected():
    with pytest.raises(ValidationError):
        run_eval([_sample(0), _sample(0)], EngineConfig(), mock_suite())


def test_report_write(tmp_path):
    report = run_eval([_sample(0)], EngineConfig(), mock_suite())
    report.write(tmp_path / "out")
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["report.json", "report.md", "timings.json"]
    md = (tmp_path / "out" / "report.md").read_text()
    assert md.splitlines()[2].startswith("| full | 1 | 100.00 |")
    assert "~" in md
    assert json.loads((tmp_path / "out" / "report.json").read_text())["rows"][0]["n_samples"] == 1


def test_samples_file_round_trip(tmp_path):
    samples = [_sample(0), _sample(1, evidence=[Evidence(text="User owns a dog.")])]
    write_samples(samples, tmp_path / "s.jsonl")
    back = load_samples(tmp_path / "s.jsonl")
    assert [(s.sample_id, s.question, s.gold_answer, s.gold_evidence, s.dialogue) for s in back] == \
        [(s.sample_id, s.question, s.gold_answer, s.gold_evidence, s.dialogue) for s in samples]


def test_longmemeval_conversion(tmp_path):
    record = {
        "question_id": "lme-1",
        "question": "What is my dog's name?",
        "answer": "Rex",
        "haystack_session_ids": ["a", "b"],
        "haystack_sessions": [
            [{"role": "user", "content": "I like tea."}, {"role": "assistant", "content": "Nice."}],
            [{"role": "user", "content": "My dog is Rex.", "has_answer": True},
             {"role": "assistant", "content": "Cute."},
             {"role": "user", "content": "Bye."}],
        ],
        "answer_session_ids": ["b"],
    }
    p = tmp_path / "lme.json"
    p.write_text(json.dumps([record]))
    (s,) = load_samples(p)
    assert s.sample_id == "lme-1"
    assert [(t.session_id, t.turn_index, t.user_text, t.assistant_text) for t in s.dialogue] == [
        ("a", 0, "I like tea.", "Nice."), ("b", 0, "My dog is Rex.", "Cute."), ("b", 1, "Bye.", "")]
    assert s.gold_evidence == [Evidence("b", 0)]


def test_longmemeval_falls_back_to_answer_sessions(tmp_path):
    record = {"question": "q", "answer": "a", "answer_session_ids": ["x"],
              "haystack_session_ids": ["x"], "haystack_sessions": [[{"role": "user", "content": "hi there"}]]}
    p = tmp_path / "lme.json"
    p.write_text(json.dumps([record]))
    assert load_samples(p)[0].gold_evidence == [Evidence("x")]
