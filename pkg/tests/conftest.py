import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddeval.synthetic import MarkovModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def tiny_pair():
    p = MarkovModel.random(3, order=1, max_len=3, concentration=0.7, seed=1)
    q = MarkovModel.random(3, order=1, max_len=3, concentration=0.7, seed=2)
    return p, q


def random_model(seed: int, vocab_size: int = 3, order: int = 1, max_len: int = 3) -> MarkovModel:
    rng = np.random.default_rng(seed)
    return MarkovModel.random(vocab_size, order=order, max_len=max_len,
                              concentration=float(rng.uniform(0.2, 2.0)), seed=seed)


# lines recorded by test_acceptance.py, echoed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
