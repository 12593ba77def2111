"""Shared pytest plumbing: one summary line per acceptance criterion."""

import pytest

_details: dict[str, str] = {}


@pytest.fixture
def record(request):
    """Attach a human-readable detail line to the acceptance summary."""

    def _record(text: str) -> None:
        _details[request.node.name] = text

    return _record


def pytest_terminal_summary(terminalreporter):
    marks: dict[str, str] = {}
    for outcome, mark in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            if outcome == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1]
            if marks.get(name) != "FAIL":  # a failure in any phase wins
                marks[name] = mark
    if not marks:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(marks):
        detail = _details.get(name)
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{marks[name]} {name}{suffix}")
