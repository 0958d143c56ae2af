"""Wall-clock timing of one LongFed greedy selection."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from fedsel.distance import full_refresh
from fedsel.exceptions import ConfigurationError
from fedsel.fairness import FairnessState
from fedsel.selector import StrategyConfig, greedy_select


@dataclass
class BenchResult:
    n_clients: int
    subset_size: int
    trials: int
    mean_ms: float
    std_ms: float
    samples_ms: np.ndarray


def random_selection_problem(n: int, dim: int = 16, seed: int = 0):
    """Random gradients and a mid-run fairness state with busy queues."""
    rng = np.random.default_rng(seed)
    matrix = full_refresh(rng.standard_normal((n, dim)))
    rounds = 20
    counts = rng.integers(0, rounds, size=n)
    state = FairnessState(rng.uniform(0, 1, n), rng.uniform(0, 1, n), counts, rounds)
    return matrix, state


def bench_select(n: int, k: int, trials: int = 100, warmup: int = 10, seed: int = 0,
                 dim: int = 16, V: float = 0.8) -> BenchResult:
    """Time ``trials`` greedy selections after ``warmup`` untimed ones."""
    if trials < 1 or warmup < 0:
        raise ConfigurationError("trials must be >= 1 and warmup >= 0")
    matrix, state = random_selection_problem(n, dim, seed)
    config = StrategyConfig("longfed", V=V, K=k)
    for _ in range(warmup):
        greedy_select(matrix, state, config)
    samples = np.empty(trials)
    for t in range(trials):
        start = time.perf_counter_ns()
        greedy_select(matrix, state, config)
        samples[t] = (time.perf_counter_ns() - start) / 1e6
    return BenchResult(n, k, trials, float(samples.mean()), float(samples.std()), samples)


def loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
