import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qlspde import TorusGrid  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def grid64():
    return TorusGrid(1, 64)


@pytest.fixture
def grid16():
    return TorusGrid(1, 16)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
