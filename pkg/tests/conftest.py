"""Collects acceptance verdict lines and prints them at the end of the run."""
import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for a criterion, then fail the test if it did not hold."""
    def record(number, title, holds, detail=""):
        line = f"{'PASS' if holds else 'FAIL'}  criterion {number}: {title}"
        if detail:
            line += f"  ({detail})"
        VERDICTS.append((number, line))
        print(line)
        assert holds, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
