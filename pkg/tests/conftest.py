import numpy as np
import pytest

from dpanon import corpus as cg
from dpanon.dp_core import make_rng


@pytest.fixture
def rng():
    return make_rng(12345, stream=0)


@pytest.fixture(scope="session")
def small_corpus():
    """Six speakers, eight short utterances each."""
    params = cg.GeneratorParams()
    specs = cg.random_speakers(6, make_rng(3, stream=1), params)
    return cg.gen_corpus(specs, 8, seed=3, params=params)


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
