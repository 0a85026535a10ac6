"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

from __future__ import annotations

_results: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or report.when not in ("setup", "call"):
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.outcome != "passed":
        _results.setdefault(name, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results, key=lambda n: int(n.split("_")[2])):
        outcome = "PASS" if all(o == "passed" for o in _results[name]) else "FAIL"
        terminalreporter.write_line(f"{outcome}  {name}")
