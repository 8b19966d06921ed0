import pytest

_acceptance_lines = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion, then assert it.

    The recorded lines are echoed in the terminal summary so a plain
    pytest run shows the per-criterion outcome even when capture is on.
    """

    def record(result):
        _acceptance_lines.append(result.line())
        print(result.line())
        assert result.passed, result.line()

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
