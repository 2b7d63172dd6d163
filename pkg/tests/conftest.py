import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import _acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    lines = _acceptance_log.LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240601)
