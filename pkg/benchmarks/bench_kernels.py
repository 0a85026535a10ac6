"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json]
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from causalmem._ext import compiled_kernels, python_kernels


def _unit(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return np.ascontiguousarray(X / np.linalg.norm(X, axis=1, keepdims=True))


def cases(rng: np.random.Generator):
    for n, d in ((200, 64), (2000, 64), (5000, 384)):
        X = _unit(rng, n, d)
        q = X[0].copy()
        yield f"single_pass n={n} d={d}", lambda m, X=X: m.single_pass(X, 0.2)
        if n <= 2000:
            yield f"pairs_above n={n} d={d}", lambda m, X=X: m.pairs_above(X, 0.3)
        yield f"top_k n={n} d={d} k=20", lambda m, X=X, q=q: m.top_k(X, q, 20)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="emit machine-readable results")
    args = ap.parse_args(argv)
    if compiled_kernels is None:
        print("compiled backend unavailable; build the extension first")
        return 1

    rows = []
    for name, fn in cases(np.random.default_rng(0)):
        py = min(timeit.repeat(lambda: fn(python_kernels), number=1, repeat=args.repeat))
        cy = min(timeit.repeat(lambda: fn(compiled_kernels), number=1, repeat=args.repeat))
        rows.append({"case": name, "python_ms": py * 1e3, "cython_ms": cy * 1e3, "speedup": py / cy})

    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'case':<32} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
        for r in rows:
            print(f"{r['case']:<32} {r['python_ms']:>10.2f} {r['cython_ms']:>10.2f} {r['speedup']:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
