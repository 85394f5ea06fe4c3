import numpy as np
import pytest

from durank.synth import SyntheticSpec, generate

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(num_short=12, num_long=12, num_eval=6, seed=3)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    return generate(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
