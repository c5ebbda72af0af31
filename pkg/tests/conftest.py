import functools

import numpy as np
import pytest

from guardforce.scenarios import get_scenario
from guardforce.sim import run_scenario


@functools.lru_cache(maxsize=None)
def cached_run(name: str, baseline: bool = False):
    s = get_scenario(name)
    return run_scenario(s.baseline() if baseline else s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
