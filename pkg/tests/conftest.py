"""Shared pytest plumbing.

The acceptance tests each announce a single verdict line.  Pytest captures
stdout, so the lines are also replayed in a dedicated section of the
terminal summary where they stay visible in a plain ``pytest -v`` run.
"""
import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Return a recorder that prints one PASS/FAIL line, then enforces it."""

    def check(criterion: int, label: str, ok: bool, detail: str = "") -> None:
        line = f"[criterion {criterion}] {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        _VERDICTS.append(line)
        print(line, flush=True)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
