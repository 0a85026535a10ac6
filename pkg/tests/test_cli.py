from __future__ import annotations

import json
import subprocess
import sys

import pytest

from causalmem.cli import main
from causalmem.persistence import store_digest

from helpers import SAGO

QUERY = json.loads((SAGO / "scenario.json").read_text())["query"]
SCRIPT = str(SAGO / "script.json")
DIALOGUE = str(SAGO / "dialogue.jsonl")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def store(tmp_path, capsys):
    p = tmp_path / "store"
    assert run(capsys, "--script", SCRIPT, "ingest", DIALOGUE, "-o", str(p))[0] == 0
    assert run(capsys, "--script", SCRIPT, "build", str(p))[0] == 0
    return p


def test_ingest_build_query(store, capsys):
    code, out, _ = run(capsys, "--script", SCRIPT, "query", str(store), QUERY)
    assert code == 0
    assert "toxic" in out and "puppy" in out


def test_query_trace_json(store, capsys):
    code, out, _ = run(capsys, "--script", SCRIPT, "query", str(store), QUERY, "--trace")
    doc = json.loads(out)
    assert code == 0
    assert set(doc) == {"answer", "context", "trace"}
    assert doc["trace"]["counterfactual"].startswith("Sago Palms are highly toxic")
    assert [c["stage"] for c in doc["trace"]["calls"]] == ["query", "counterfactual", "refine", "answer"]


def test_manifest_stage(store, capsys):
    manifest = json.loads((store / "manifest.json").read_text())
    assert manifest["stage"] == "built" and manifest["format_version"] == 1
    assert manifest["counts"]["facts"] == 30


def test_inspect(store, capsys):
    code, out, _ = run(capsys, "inspect", str(store), "--degree-histogram")
    doc = json.loads(out)
    assert code == 0 and doc["facts"] == 30 and sum(doc["histogram"].values()) == 30
    fid = json.loads((store / "facts.jsonl").read_text().splitlines()[0])["fact_id"]
    code, out, _ = run(capsys, "inspect", str(store), "--fact", fid)
    assert json.loads(out)["fact"]["fact_id"] == fid
    code, _, err = run(capsys, "inspect", str(store), "--fact", "nope")
    assert code == 2 and json.loads(err)["type"] == "ValidationError"


def test_eval_with_ablations(store, tmp_path, capsys):
    samples = tmp_path / "s.jsonl"
    samples.write_text(json.dumps({"sample_id": "sago", "question": QUERY, "answer": "Sago Palms are toxic to dogs",
                                   "evidence": [{"session_id": "puppy", "turn_index": 1}]}) + "\n")
    out_dir = tmp_path / "report"
    code, out, _ = run(capsys, "--script", SCRIPT, "eval", str(store), str(samples), "--ablate", "all",
                       "-o", str(out_dir))
    assert code == 0
    rows = json.loads((out_dir / "report.json").read_text())["rows"]
    assert [r["variant"] for r in rows] == ["full", "w/o causal", "w/o reasoning", "w/o semantic"]
    acc = {r["variant"]: r["retrieval_accuracy"] for r in rows}
    assert acc["full"] == 1.0 and acc["w/o reasoning"] == 0.0
    assert "| full |" in out


def test_empty_store_query_exits_2(tmp_path, capsys):
    d = tmp_path / "d.jsonl"
    d.write_text("")
    assert run(capsys, "ingest", str(d), "-o", str(tmp_path / "s"))[0] == 0
    code, _, err = run(capsys, "query", str(tmp_path / "s"), "anything")
    assert code == 2
    assert json.loads(err) == {"error": "empty graph", "type": "EmptyGraph", "exit": 2}


def test_missing_store_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "query", str(tmp_path / "nope"), "q")
    assert code == 2 and len(err.strip().splitlines()) == 1


def test_corrupt_store_exits_3(store, capsys):
    (store / "embeddings.bin").write_bytes(b"CMEB")
    code, _, err = run(capsys, "query", str(store), "q")
    assert code == 3 and json.loads(err)["exit"] == 3


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"engine": {"pmi_threshold": -3}}))
    code, _, err = run(capsys, "--config", str(cfg), "ingest", DIALOGUE, "-o", str(tmp_path / "s"))
    assert code == 2 and "pmi_threshold" in json.loads(err)["error"]


def test_unreachable_provider_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"providers": {"api_base": "http://127.0.0.1:9/v1", "backoff": 0.0, "timeout": 0.5}}))
    d = tmp_path / "d.jsonl"
    d.write_text(json.dumps({"session_id": "s", "turn_index": 0, "user": "hello"}) + "\n")
    code, _, err = run(capsys, "--config", str(cfg), "--provider", "http", "ingest", str(d), "-o", str(tmp_path / "s"))
    assert code == 1 and json.loads(err)["type"] == "TransportError"
    assert not (tmp_path / "s").exists()


def test_record_then_replay(store, tmp_path, capsys):
    cassette = tmp_path / "c.jsonl"
    code, live, _ = run(capsys, "--script", SCRIPT, "--record", str(cassette), "query", str(store), QUERY, "--trace")
    assert code == 0
    code, replayed, _ = run(capsys, "--provider", "replay", str(cassette), "query", str(store), QUERY, "--trace")
    assert code == 0 and replayed == live
    code, _, err = run(capsys, "--provider", "replay", str(cassette), "query", str(store), "a different question")
    assert code == 1 and json.loads(err)["type"] == "ReplayMiss"


def test_cli_runs_are_byte_identical(tmp_path, capsys):
    digests = []
    for name in ("a", "b"):
        p = tmp_path / name
        run(capsys, "--script", SCRIPT, "ingest", DIALOGUE, "-o", str(p))
        run(capsys, "--script", SCRIPT, "build", str(p))
        digests.append(store_digest(p))
    assert digests[0] == digests[1]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "causalmem", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "ingest" in out.stdout
