import pytest

from hapf.circuit import Mode
from hapf.runner import Scenario, execute


@pytest.fixture(scope="session")
def baseline_run():
    return execute(Scenario(mode=Mode.BASELINE))


@pytest.fixture(scope="session")
def hybrid_run():
    return execute(Scenario(mode=Mode.HYBRID))


def pytest_terminal_summary(terminalreporter):
    lines = [
        value
        for reports in terminalreporter.stats.values()
        for rep in reports
        if getattr(rep, "when", None) == "call"
        for name, value in getattr(rep, "user_properties", ())
        if name == "acceptance"
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
