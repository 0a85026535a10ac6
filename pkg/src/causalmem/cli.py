"""Command-line entry point: ingest, build, query, eval, inspect.

Exit codes: 0 ok, 1 provider/transport failure, 2 user or input error, 3 store corruption.
Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError, IoError, MemoryEngineError, PersistenceError, ProviderError, ValidationError
from .evaluation import ABLATIONS, load_samples, run_eval
from .extraction import load_dialogue
from .model import EngineConfig
from .persistence import load_graph, read_manifest, save_graph
from .pipeline import build, ingest
from .providers import ProviderSuite, build_suite
from .retrieval import query_pipeline

logger = logging.getLogger("causalmem")


def load_config_file(path: str | None) -> tuple[EngineConfig, dict[str, Any]]:
    """JSON file with optional ``engine`` and ``providers`` sections (or flat engine fields)."""
    if path is None:
        return EngineConfig(), {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    if "engine" in data or "providers" in data:
        engine, providers = data.get("engine") or {}, data.get("providers") or {}
    else:
        engine, providers = data, {}
    return EngineConfig.from_dict(engine), dict(providers)


def _split_provider(argv: list[str]) -> list[str]:
    # `--provider replay <cassette>` takes an extra positional value
    out = list(argv)
    for i, tok in enumerate(out[:-2]):
        if tok == "--provider" and out[i + 1] == "replay" and not out[i + 2].startswith("-"):
            out[i + 2:i + 3] = ["--cassette", out[i + 2]]
            break
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalmem", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--provider", choices=["mock", "http", "replay"], default="mock")
    p.add_argument("--cassette", help="cassette file for --provider replay")
    p.add_argument("--record", help="append every provider exchange to this cassette")
    p.add_argument("--script", help="scripted replies for the mock chat provider (JSON rules)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="extract, embed and cluster a dialogue into a new store")
    s.add_argument("dialogue")
    s.add_argument("-o", "--output", required=True, help="store directory")

    s = sub.add_parser("build", help="construct the semantic and causal edges of a store")
    s.add_argument("store")

    s = sub.add_parser("query", help="answer a question from a store")
    s.add_argument("store")
    s.add_argument("question")
    s.add_argument("--trace", action="store_true", help="print answer, context and trace as JSON")

    s = sub.add_parser("eval", help="run the evaluation harness")
    s.add_argument("store")
    s.add_argument("samples")
    s.add_argument("--ablate", action="append", default=[], choices=sorted(ABLATIONS) + ["all"])
    s.add_argument("-o", "--output", default="eval-report", help="report directory (default: ./eval-report)")

    s = sub.add_parser("inspect", help="show store contents")
    s.add_argument("store")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--fact", metavar="ID")
    g.add_argument("--degree-histogram", action="store_true")
    return p


def _suite(args, providers: dict[str, Any]) -> ProviderSuite:
    if args.provider == "replay" and not args.cassette:
        raise ValidationError("--provider replay needs a cassette path")
    script = args.script or providers.get("mock_script")
    return build_suite(args.provider, seed=args.seed, cassette=args.cassette, record=args.record,
                       settings=providers, script=script)


def _print(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2))


def cmd_ingest(args, config: EngineConfig, providers: dict[str, Any]) -> int:
    suite = _suite(args, providers)
    graph = ingest(load_dialogue(args.dialogue), config, suite)
    save_graph(graph, args.output, config=config, stage="ingested")
    _print({"store": args.output, "facts": len(graph.facts), "clusters": len(graph.clusters)})
    return 0


def cmd_build(args, config: EngineConfig, providers: dict[str, Any]) -> int:
    suite = _suite(args, providers)
    graph = build(load_graph(args.store), config, suite)
    save_graph(graph, args.store, config=config, stage="built")
    _print(read_manifest(args.store)["counts"])
    return 0


def cmd_query(args, config: EngineConfig, providers: dict[str, Any]) -> int:
    graph = load_graph(args.store)
    suite = _suite(args, providers)
    answer, context, trace = query_pipeline(args.question, graph, config, suite)
    if args.trace:
        _print({"answer": answer, "context": context.to_dict(), "trace": trace.to_dict()})
    else:
        print(answer)
    return 0


def cmd_eval(args, config: EngineConfig, providers: dict[str, Any]) -> int:
    ablations = sorted(ABLATIONS) if "all" in args.ablate else list(dict.fromkeys(args.ablate))
    samples = load_samples(args.samples)
    store = Path(args.store)
    default_graph = load_graph(store) if (store / "manifest.json").exists() else None
    if default_graph is None and any(not s.dialogue for s in samples):
        raise ValidationError(f"{store} is not a store and some samples carry no dialogue")
    suite = _suite(args, providers)
    report = run_eval(samples, config, suite, ablations=ablations, default_graph=default_graph)
    report.write(args.output)
    sys.stdout.write(report.to_markdown())
    return 0


def cmd_inspect(args, config: EngineConfig, providers: dict[str, Any]) -> int:
    graph = load_graph(args.store)
    manifest = read_manifest(args.store)
    if args.fact:
        fact = graph.facts.get(args.fact)
        if fact is None:
            raise ValidationError(f"no fact {args.fact}")
        edges = [e.to_dict() for e in graph.edges if args.fact in (e.src, e.dst)]
        _print({"fact": fact.to_dict(), "cluster": graph.cluster_of().get(args.fact), "edges": edges})
    elif args.degree_histogram:
        degrees = graph.degrees()
        hist = Counter(degrees.values())
        _print({
            "facts": len(graph.facts),
            "mean_degree": graph.mean_degree(),
            "histogram": {str(k): hist[k] for k in sorted(hist)},
            "semantic_edge_threshold": (manifest.get("config") or {}).get("semantic_edge_threshold"),
        })
    else:
        _print({**manifest, "mean_degree": graph.mean_degree()})
    return 0


COMMANDS = {"ingest": cmd_ingest, "build": cmd_build, "query": cmd_query, "eval": cmd_eval, "inspect": cmd_inspect}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ProviderError):
        return 1
    if isinstance(exc, IoError):
        return 2
    if isinstance(exc, PersistenceError):
        return 3
    return 2


def main(argv: Sequence[str] | None = None) -> int:
    argv = _split_provider(list(sys.argv[1:] if argv is None else argv))
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, providers = load_config_file(args.config)
        return COMMANDS[args.command](args, config, providers)
    except (MemoryEngineError, ValueError, OSError) as exc:
        code = exit_code_for(exc) if isinstance(exc, MemoryEngineError) else 2
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        sys.stderr.write(json.dumps({"error": msg, "type": type(exc).__name__, "exit": code}) + "\n")
        return code


if __name__ == "__main__":
    raise SystemExit(main())
