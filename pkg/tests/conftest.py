import pytest

_criteria = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return _criteria


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for line in _criteria:
        terminalreporter.write_line(line)
