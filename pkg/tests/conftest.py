import pytest

from ftfsim.circuit import build_composite

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def device():
    return build_composite()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
