"""Per-round client selection.

The LongFed objective for a subset ``S`` is

    G(S) = sum_i min_{j in S} { (1 - V) [Z_i m_i + Q_i n_i] + V d(i, j) }

where ``m_i``/``n_i`` are evaluated under the bitmap induced by ``S``. The
fairness part does not depend on ``j`` and is modular in ``S``; the distance
part is a facility-location cost. Greedy maximisation of
``Gbar(S) = G({e}) - G(S + {e})`` therefore needs one pass over the distance
matrix per pick.

Selectors are sklearn estimators so ``get_params``/``set_params``/``clone``
work on them; ``select`` is the per-round entry point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from fedsel.distance import DistanceMatrix, NORMS, representation
from fedsel.exceptions import ConfigurationError, ContractViolation
from fedsel.fairness import FairnessState, drift_terms, reference_clients

BRUTE_FORCE_LIMIT = 10 ** 6
PHANTOM = "phantom"

Auxiliary = Union[str, int]


@dataclass
class SelectionDecision:
    subset: List[int]
    weights: Dict[int, float]
    objective_value: float
    strategy_name: str
    n_evaluations: int = 0
    refs: Optional[np.ndarray] = field(default=None, repr=False)

    def bitmap(self, n_clients: int) -> np.ndarray:
        x = np.zeros(n_clients, dtype=np.int64)
        x[self.subset] = 1
        return x


@dataclass
class StrategyConfig:
    """Declarative strategy description, as read from plan files and the CLI.

    ``V`` and ``K`` left as ``None`` are filled in from the federation config.
    """

    kind: str = "longfed"
    V: Optional[float] = None
    K: Optional[int] = None
    d_candidates: Optional[int] = None
    temperature: float = 1.0
    slack: int = 1
    fair: bool = False
    objective_norm: str = "unsquared"
    auxiliary: Auxiliary = PHANTOM
    seed: int = 0
    name: Optional[str] = None

    @classmethod
    def parse(cls, text: str, **overrides) -> "StrategyConfig":
        """``"divfl+fair"`` -> DivFL wrapped with the uniform-selection constraint."""
        kind = text.strip().lower()
        fair = kind.endswith("+fair")
        if fair:
            kind = kind[:-len("+fair")]
        fair = bool(overrides.pop("fair", False)) or fair
        return cls(kind=kind, fair=fair, **overrides)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.kind + ("+fair" if self.fair else "")


# ---------------------------------------------------------------------------
# objective functions
# ---------------------------------------------------------------------------

def _subset_bitmap(n: int, subset) -> np.ndarray:
    x = np.zeros(n)
    x[list(subset)] = 1.0
    return x


def objective_g(subset, matrix: DistanceMatrix, state: FairnessState, V: float,
                norm: str = "unsquared", refs: Optional[np.ndarray] = None) -> float:
    """Evaluate G term by term, exactly as written (no modular shortcut)."""
    subset = sorted(set(int(s) for s in subset))
    if not subset:
        raise ContractViolation("G is undefined for an empty subset")
    values = matrix.values(norm)
    terms = drift_terms(state, matrix, _subset_bitmap(state.n_clients, subset), norm, refs)
    total = 0.0
    for i in range(state.n_clients):
        fair_i = (1.0 - V) * (state.Z[i] * terms.m[i] + state.Q[i] * terms.n[i])
        total += min(fair_i + V * values[i, j] for j in subset)
    return total


def _g_vectorized(subset, values, state: Optional[FairnessState], refs, V) -> float:
    dist = values[:, subset].min(axis=1)
    total = V * float(dist.sum())
    if state is not None:
        x = _subset_bitmap(len(values), subset)
        diff = x - x[refs]
        total += (1.0 - V) * float(state.Z @ (diff - state.delta) + state.Q @ (-diff - state.delta))
    return total


def _g_with_auxiliary(subset, matrix, state, V, norm, auxiliary, refs) -> float:
    if auxiliary == PHANTOM:
        values = matrix.values(norm)
        phantom = float(values.max()) if values.size else 0.0
        terms = drift_terms(state, matrix, _subset_bitmap(state.n_clients, subset), norm, refs)
        fair = (1.0 - V) * (state.Z * terms.m + state.Q * terms.n)
        dist = np.full(state.n_clients, phantom)
        if subset:
            dist = np.minimum(dist, values[:, sorted(subset)].min(axis=1))
        return float(np.sum(fair + V * dist))
    return objective_g(set(subset) | {int(auxiliary)}, matrix, state, V, norm, refs)


def objective_g_bar(subset, matrix: DistanceMatrix, state: FairnessState, V: float,
                    norm: str = "unsquared", auxiliary: Auxiliary = PHANTOM,
                    refs: Optional[np.ndarray] = None) -> float:
    """``G({e}) - G(S + {e})``; zero on the empty set.

    ``auxiliary="phantom"`` uses an element at the largest matrix distance from
    every client that is never counted as selected, so ``G(S + {e}) = G(S)``
    for non-empty ``S``. An integer uses that client as ``e``.
    """
    subset = set(int(s) for s in subset)
    if refs is None:
        refs = reference_clients(state.frequencies, matrix.values(norm), state.epsilon)
    base = _g_with_auxiliary(set(), matrix, state, V, norm, auxiliary, refs)
    return base - _g_with_auxiliary(subset, matrix, state, V, norm, auxiliary, refs)


def fairness_coefficients(state: FairnessState, refs: np.ndarray) -> np.ndarray:
    """Coefficient of ``x_k`` in ``sum_i Z_i m_i + Q_i n_i``.

    ``sum_i (Z_i - Q_i)(x_i - x_ref(i))`` regrouped by ``k``; self-referencing
    clients cancel.
    """
    u = state.Z - state.Q
    return u - np.bincount(refs, weights=u, minlength=state.n_clients)


# ---------------------------------------------------------------------------
# greedy and exhaustive selection
# ---------------------------------------------------------------------------

def _validate(config: StrategyConfig, n: int):
    if config.K is None or config.V is None:
        raise ConfigurationError("strategy needs K and V")
    if not 1 <= config.K <= n:
        raise ConfigurationError(f"K={config.K} outside [1, {n}]")
    if not 0.0 <= config.V <= 1.0:
        raise ConfigurationError("V must lie in [0, 1]")
    if config.objective_norm not in NORMS:
        raise ConfigurationError(f"unknown objective norm {config.objective_norm!r}")


def _clipped_colsum(level: np.ndarray, block: np.ndarray, out: np.ndarray) -> np.ndarray:
    """``sum_i max(level_i - block[i, k], 0)`` per column, computed in ``out``."""
    np.subtract(level[:, None], block, out=out)
    np.maximum(out, 0.0, out=out)
    return out.sum(axis=0)


def greedy_select(matrix: DistanceMatrix, state: FairnessState, config: StrategyConfig,
                  use_queues: bool = True) -> SelectionDecision:
    """Greedy maximisation of ``Gbar`` under ``|S| = K``.

    Each of the ``K`` iterations scores every remaining candidate once, so the
    run makes ``sum_k (N - k)`` marginal evaluations. Gains within ``1e-9``
    of the objective's scale count as ties and go to the lowest client index.
    Distance reductions are updated incrementally, so a pick costs time
    proportional to the rows it actually improves.
    """
    n = matrix.n_clients
    _validate(config, n)
    V, K = config.V, config.K
    values = matrix.values(config.objective_norm)
    refs = reference_clients(state.frequencies, values, state.epsilon)
    if use_queues and V < 1.0:
        fair = (1.0 - V) * fairness_coefficients(state, refs)
    else:
        fair = np.zeros(n)

    if config.auxiliary == PHANTOM:
        current = np.full(n, values.max() if n else 0.0)
    else:
        free = int(config.auxiliary)
        current = values[:, free].astype(np.float64)
        fair = fair.copy()
        fair[free] = 0.0

    # reduction[k] = sum_i max(current_i - d(i, k), 0), kept up to date by
    # rescanning only the rows whose nearest-selected distance shrank
    buf = np.empty_like(values, dtype=np.float64)
    reduction = _clipped_colsum(current, values, buf)
    # gains this close count as tied, so summation order cannot pick the winner
    tol = 1e-9 * (V * float(reduction.max(initial=0.0)) + float(np.abs(fair).max(initial=0.0)) + 1e-300)
    selected: List[int] = []
    available = np.ones(n, dtype=bool)
    evaluations = 0
    for _ in range(K):
        gains = np.where(available, V * reduction - fair, -np.inf)
        evaluations += int(np.count_nonzero(available))
        best = int(np.flatnonzero(gains >= gains.max() - tol)[0])
        selected.append(best)
        available[best] = False
        column = values[:, best]
        rows = np.flatnonzero(column < current)
        if 2 * rows.size > n:
            current = np.minimum(current, column)
            reduction = _clipped_colsum(current, values, buf)
        elif rows.size:
            block = values[rows]
            out = buf[:rows.size]
            reduction -= _clipped_colsum(current[rows], block, out)
            reduction += _clipped_colsum(column[rows], block, out)
            current[rows] = column[rows]

    subset = sorted(selected)
    rmap = representation(values, subset)
    value = _g_vectorized(subset, values, state if use_queues else None, refs, V)
    return SelectionDecision(subset, {int(j): float(w) for j, w in zip(rmap.subset, rmap.weights)},
                             value, config.label, evaluations, refs)


def brute_force_select(matrix: DistanceMatrix, state: FairnessState,
                       config: StrategyConfig) -> SelectionDecision:
    """Exhaustive minimiser of G over all K-subsets (lexicographic tie-break)."""
    n = matrix.n_clients
    _validate(config, n)
    if math.comb(n, config.K) > BRUTE_FORCE_LIMIT:
        raise ConfigurationError(
            f"C({n}, {config.K}) subsets exceeds the brute-force limit of {BRUTE_FORCE_LIMIT}")
    refs = reference_clients(state.frequencies, matrix.values(config.objective_norm), state.epsilon)
    best, best_value = None, math.inf
    for combo in itertools.combinations(range(n), config.K):
        value = objective_g(combo, matrix, state, config.V, config.objective_norm, refs)
        if value < best_value:
            best, best_value = combo, value
    rmap = representation(matrix.values(config.objective_norm), best)
    return SelectionDecision(list(best), {int(j): float(w) for j, w in zip(rmap.subset, rmap.weights)},
                             best_value, config.label + ":brute", math.comb(n, config.K), refs)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def _uniform(subset, n: int, name: str) -> SelectionDecision:
    subset = sorted(int(s) for s in subset)
    w = n / len(subset)
    return SelectionDecision(subset, {j: w for j in subset}, math.nan, name)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def baseline_select(kind: str, losses: Optional[np.ndarray], matrix: Optional[DistanceMatrix],
                    counts: np.ndarray, config: StrategyConfig, rng,
                    round_index: int = 1, state: Optional[FairnessState] = None) -> SelectionDecision:
    """Random, power-of-choice, loss-guided, round-robin and DivFL selection."""
    n = len(counts)
    K = config.K
    if K is None or not 1 <= K <= n:
        raise ConfigurationError(f"K={K} outside [1, {n}]")
    kind = kind.lower()
    if kind == "random":
        return _uniform(rng.choice(n, K, replace=False), n, config.label)
    if kind in ("powerd", "powerofchoice", "poc"):
        d = config.d_candidates if config.d_candidates is not None else min(n, 2 * K)
        if d < K or d > n:
            raise ConfigurationError(f"d_candidates={d} must lie in [K, N]")
        pool = rng.choice(n, d, replace=False)
        if d == K:
            return _uniform(pool, n, config.label)
        _need(losses, kind)
        order = sorted(pool, key=lambda j: (-losses[j], j))
        return _uniform(order[:K], n, config.label)
    if kind in ("afl", "lossguided"):
        _need(losses, kind)
        probs = softmax(np.asarray(losses, dtype=np.float64) / config.temperature)
        return _uniform(rng.choice(n, K, replace=False, p=probs), n, config.label)
    if kind in ("roundrobin", "rr"):
        start = ((round_index - 1) * K) % n
        return _uniform([(start + k) % n for k in range(K)], n, config.label)
    if kind == "divfl":
        if matrix is None:
            raise ConfigurationError("divfl needs a distance matrix")
        cold = state if state is not None else FairnessState.initial(n)
        cfg = StrategyConfig(**{**config.__dict__, "V": 1.0})
        return greedy_select(matrix, cold, cfg, use_queues=False)
    raise ConfigurationError(f"unknown baseline {kind!r}")


def _need(losses, kind):
    if losses is None:
        raise ConfigurationError(f"{kind} selection needs client losses")


def uniform_fair_wrap(inner: SelectionDecision, counts, config: StrategyConfig,
                      matrix: Optional[DistanceMatrix] = None) -> SelectionDecision:
    """Swap out over-selected picks for the least-selected clients.

    A pick whose count exceeds ``min(counts) + slack`` is replaced by the
    least-selected client not already chosen (lowest index on ties).
    Coreset weights are recomputed when the inner decision used them.
    """
    counts = np.asarray(counts)
    n = len(counts)
    floor = counts.min() + config.slack
    keep = [j for j in inner.subset if counts[j] <= floor]
    dropped = len(inner.subset) - len(keep)
    if dropped == 0:
        return SelectionDecision(list(inner.subset), dict(inner.weights), inner.objective_value,
                                 config.label, inner.n_evaluations, inner.refs)
    taken = set(keep)
    pool = sorted((j for j in range(n) if j not in taken and counts[j] <= floor),
                  key=lambda j: (counts[j], j))
    if len(pool) < dropped:
        pool += sorted((j for j in range(n) if j not in taken and j not in pool),
                       key=lambda j: (counts[j], j))
    subset = sorted(keep + pool[:dropped])
    uniform_w = n / len(subset)
    coreset = any(abs(w - uniform_w) > 1e-12 for w in inner.weights.values())
    if coreset and matrix is not None:
        rmap = representation(matrix.values(config.objective_norm), subset)
        weights = {int(j): float(w) for j, w in zip(rmap.subset, rmap.weights)}
    else:
        weights = {j: uniform_w for j in subset}
    return SelectionDecision(subset, weights, math.nan, config.label, inner.n_evaluations, inner.refs)


# ---------------------------------------------------------------------------
# estimator-style selectors
# ---------------------------------------------------------------------------

class BaseSelector(BaseEstimator):
    """Common surface: ``select(round_index, matrix, state, losses, rng)``."""

    needs_losses = False
    needs_matrix = False

    def to_config(self) -> StrategyConfig:
        raise NotImplementedError

    def select(self, round_index: int, matrix: DistanceMatrix, state: FairnessState,
               losses: Optional[np.ndarray], rng) -> SelectionDecision:
        raise NotImplementedError


class LongFedSelector(BaseSelector):
    needs_matrix = True

    def __init__(self, subset_size=10, V=0.8, objective_norm="unsquared", auxiliary=PHANTOM):
        self.subset_size = subset_size
        self.V = V
        self.objective_norm = objective_norm
        self.auxiliary = auxiliary

    def to_config(self):
        return StrategyConfig("longfed", V=self.V, K=self.subset_size,
                              objective_norm=self.objective_norm, auxiliary=self.auxiliary)

    def select(self, round_index, matrix, state, losses, rng):
        return greedy_select(matrix, state, self.to_config())


class DivFLSelector(BaseSelector):
    """Facility-location greedy on gradient distances only (``V = 1``, no queues)."""

    needs_matrix = True

    def __init__(self, subset_size=10, objective_norm="unsquared", auxiliary=PHANTOM):
        self.subset_size = subset_size
        self.objective_norm = objective_norm
        self.auxiliary = auxiliary

    def to_config(self):
        return StrategyConfig("divfl", V=1.0, K=self.subset_size,
                              objective_norm=self.objective_norm, auxiliary=self.auxiliary)

    def select(self, round_index, matrix, state, losses, rng):
        return greedy_select(matrix, state, self.to_config(), use_queues=False)


class RandomSelector(BaseSelector):
    def __init__(self, subset_size=10):
        self.subset_size = subset_size

    def to_config(self):
        return StrategyConfig("random", K=self.subset_size)

    def select(self, round_index, matrix, state, losses, rng):
        return baseline_select("random", losses, matrix, state.counts, self.to_config(), rng, round_index)


class PowerOfChoiceSelector(BaseSelector):
    needs_losses = True

    def __init__(self, subset_size=10, d_candidates=None):
        self.subset_size = subset_size
        self.d_candidates = d_candidates

    def to_config(self):
        return StrategyConfig("powerd", K=self.subset_size, d_candidates=self.d_candidates)

    def select(self, round_index, matrix, state, losses, rng):
        return baseline_select("powerd", losses, matrix, state.counts, self.to_config(), rng, round_index)


class LossGuidedSelector(BaseSelector):
    """AFL-style sampling with probability ``softmax(loss / temperature)``."""

    needs_losses = True

    def __init__(self, subset_size=10, temperature=1.0):
        self.subset_size = subset_size
        self.temperature = temperature

    def to_config(self):
        return StrategyConfig("afl", K=self.subset_size, temperature=self.temperature)

    def select(self, round_index, matrix, state, losses, rng):
        return baseline_select("afl", losses, matrix, state.counts, self.to_config(), rng, round_index)


class RoundRobinSelector(BaseSelector):
    def __init__(self, subset_size=10):
        self.subset_size = subset_size

    def to_config(self):
        return StrategyConfig("roundrobin", K=self.subset_size)

    def select(self, round_index, matrix, state, losses, rng):
        return baseline_select("roundrobin", losses, matrix, state.counts, self.to_config(), rng, round_index)


class UniformFairSelector(BaseSelector):
    """Wraps another selector with the uniform-selection constraint."""

    def __init__(self, inner=None, slack=1):
        self.inner = inner
        self.slack = slack

    @property
    def needs_losses(self):
        return self.inner.needs_losses

    @property
    def needs_matrix(self):
        return True

    def to_config(self):
        cfg = self.inner.to_config()
        return StrategyConfig(**{**cfg.__dict__, "fair": True, "slack": self.slack})

    def select(self, round_index, matrix, state, losses, rng):
        decision = self.inner.select(round_index, matrix, state, losses, rng)
        return uniform_fair_wrap(decision, state.counts, self.to_config(), matrix)


def make_selector(config: StrategyConfig) -> BaseSelector:
    kind = config.kind.lower()
    K = config.K
    if kind == "longfed":
        sel = LongFedSelector(K, config.V, config.objective_norm, config.auxiliary)
    elif kind == "divfl":
        sel = DivFLSelector(K, config.objective_norm, config.auxiliary)
    elif kind == "random":
        sel = RandomSelector(K)
    elif kind in ("powerd", "powerofchoice", "poc"):
        sel = PowerOfChoiceSelector(K, config.d_candidates)
    elif kind in ("afl", "lossguided"):
        sel = LossGuidedSelector(K, config.temperature)
    elif kind in ("roundrobin", "rr"):
        sel = RoundRobinSelector(K)
    else:
        raise ConfigurationError(f"unknown strategy kind {config.kind!r}")
    if config.fair:
        sel = UniformFairSelector(sel, config.slack)
    return sel
