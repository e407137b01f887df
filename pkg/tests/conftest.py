import sys

import numpy as np
import pytest

from activeflow.paths import Scheduler, SourceDistribution, Vocab


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["linear", "quadratic"])
def scheduler(request):
    return Scheduler(request.param)


def mask_source(V):
    return SourceDistribution("mask", Vocab(V))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_terminal_summary_lines():
        terminalreporter.write_line(line)
