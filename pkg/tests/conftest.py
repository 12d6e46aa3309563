import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def white100():
    return np.full((100, 100, 3), 255, dtype=np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag, ok, text in sorted(RESULTS, key=lambda r: (int(r[0][1:].split(".")[0]), r[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {tag:<5} {text}")
