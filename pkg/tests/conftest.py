"""Shared fixtures and the acceptance-report hook.

The acceptance module records one line per criterion; the terminal-summary
hook replays them after the run so the verdicts are visible even when pytest
captures per-test output.
"""
from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from beaconseg.ingest import Corpus
from beaconseg.model import UserHistory

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


def corpus_from_dicts(histories: list[tuple[str, dict[str, int]]]) -> Corpus:
    return Corpus.from_histories(
        [UserHistory.from_counts(user, counts) for user, counts in histories]
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
