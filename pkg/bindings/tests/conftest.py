"""Shared pieces for the bindings tests: fixture corpus path, an
in-subprocess CLI runner, and a terminal summary line per acceptance
test (pytest hides captured stdout of passing tests, so pass/fail
verdicts are emitted from this hook instead)."""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).parent / "fixtures"

_details: dict[str, str] = {}


@pytest.fixture
def record(request):
    """Stores a detail string to show next to this test's summary line."""

    def _record(text: str) -> None:
        _details[request.node.name] = text

    return _record


def run_cli(*argv: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "instamask.cli", *argv],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="session")
def cli():
    return run_cli


def pytest_terminal_summary(terminalreporter) -> None:
    marks: dict[str, tuple[str, str]] = {}
    for status, mark in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance_bindings.py::" not in nodeid:
                continue
            if status == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::", 1)[1]
            if marks.get(name, ("", ""))[0] != "FAIL":
                marks[name] = (mark, _details.get(name, ""))
    if not marks:
        return
    terminalreporter.write_sep("-", "cross-boundary acceptance")
    for name in sorted(marks):
        mark, detail = marks[name]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{mark} {name}{suffix}")
