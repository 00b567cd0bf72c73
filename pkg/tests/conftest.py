"""Shared pytest plumbing: the acceptance-criteria report.

Acceptance tests record one pass/fail line each; the lines are echoed in a
dedicated terminal section at the end of the run so the verdicts are visible
whether or not the individual tests passed.
"""

import pytest

_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def record_criterion():
    def record(line: str) -> None:
        _CRITERION_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)
