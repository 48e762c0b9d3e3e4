"""Shared test plumbing.

The acceptance tests register one line per criterion through the
`criterion_log` fixture; the terminal summary hook prints the pass/fail board
after the normal pytest output so a full run ends with a readable verdict
list.
"""

from __future__ import annotations

import numpy as np
import pytest

_CRITERION_LINES: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion_log():
    """Recorder: call with (number, name, passed, detail) before asserting, so
    the board line survives a failing assert."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        _CRITERION_LINES[number] = (name, passed, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERION_LINES):
        name, passed, detail = _CRITERION_LINES[number]
        verdict = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"[criterion {number:02d}] {name:<34s} {verdict}{suffix}")


@pytest.fixture
def rng():
    """A throwaway generator for test-local sampling (not the library's RNG)."""
    return np.random.default_rng(90210)
