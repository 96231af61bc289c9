import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance check; printed in the terminal summary."""

    def record(name, ok, detail=""):
        _LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
