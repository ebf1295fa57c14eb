import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("INVLAB_HYPOTHESIS_PROFILE", "default"))

_CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion_line():
    """Record one pass/fail line; all lines are echoed in the terminal summary."""
    def record(number: int, passed: bool, text: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
        print(line)
        _CRITERIA_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA_LINES:
            terminalreporter.write_line(line)
