import numpy as np
import pytest
from hypothesis import settings

from fedsel.distance import full_refresh
from fedsel.fairness import FairnessState

settings.register_profile("fedsel", max_examples=60, deadline=None)
settings.load_profile("fedsel")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, n, rounds=20, epsilon=0.3, delta=0.01):
    counts = rng.integers(0, rounds + 1, size=n)
    return FairnessState(rng.uniform(0, 2, n), rng.uniform(0, 2, n), counts, rounds, epsilon, delta)


def random_matrix(rng, n, dim=3):
    return full_refresh(rng.standard_normal((n, dim)))


def dyadic_instance(rng, n, rounds=8):
    """Integer distances and quarter-valued queues, so float sums are exact."""
    pts = rng.integers(0, 4, size=(n, 2)).astype(float)
    matrix = full_refresh(pts)
    counts = rng.integers(0, rounds + 1, size=n)
    Z = rng.integers(0, 9, size=n) / 4.0
    Q = rng.integers(0, 9, size=n) / 4.0
    state = FairnessState(Z, Q, counts, rounds, epsilon=2.0, delta=0.25)
    return matrix, state
