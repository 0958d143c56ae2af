"""Individual-fairness bookkeeping: virtual queues, reference clients and metrics.

Two nonnegative queues per client track the two one-sided time-averaged
constraints ``p_i - p_ref - delta <= 0`` and ``p_ref - p_i - delta <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional

import numpy as np

from fedsel.distance import DistanceMatrix


@dataclass(frozen=True)
class FairnessState:
    Z: np.ndarray
    Q: np.ndarray
    counts: np.ndarray
    round: int = 0
    epsilon: float = 0.3
    delta: float = 0.01

    @classmethod
    def initial(cls, n_clients: int, epsilon: float = 0.3, delta: float = 0.01) -> "FairnessState":
        return cls(np.zeros(n_clients), np.zeros(n_clients),
                   np.zeros(n_clients, dtype=np.int64), 0, epsilon, delta)

    @property
    def n_clients(self) -> int:
        return len(self.Z)

    @property
    def frequencies(self) -> np.ndarray:
        """Running selection frequencies ``c_i / t`` (all zero before the first round)."""
        if self.round == 0:
            return np.zeros(self.n_clients)
        return self.counts / self.round

    def lyapunov(self) -> float:
        return float(0.5 * (self.Z @ self.Z + self.Q @ self.Q))

    def scaled(self, factor: float) -> "FairnessState":
        return replace(self, Z=self.Z * factor, Q=self.Q * factor)


class DriftTerms(NamedTuple):
    m: np.ndarray
    n: np.ndarray
    refs: np.ndarray


class Violation(NamedTuple):
    i: int
    j: int
    distance: float
    gap: float


def reference_clients(freqs: np.ndarray, values: np.ndarray, epsilon: float) -> np.ndarray:
    """Vectorised reference-client rule for every client at once.

    For client ``i`` the candidates are ``{j : d(i, j) <= epsilon}``; the
    reference is the candidate with the largest frequency gap. A zero gap
    maps to ``i`` itself, other ties to the lowest index.
    """
    gaps = np.subtract.outer(freqs, freqs)
    np.abs(gaps, out=gaps)
    gaps[values > epsilon] = -1.0
    refs = np.argmax(gaps, axis=1)
    best = gaps[np.arange(len(freqs)), refs]
    return np.where(best > 0, refs, np.arange(len(freqs)))


def reference_client(state: FairnessState, matrix: DistanceMatrix, i: int,
                     norm: str = "unsquared") -> int:
    values = matrix.values(norm)
    p = state.frequencies
    best_j, best_gap = i, 0.0
    for j in range(state.n_clients):
        if values[i, j] <= state.epsilon:
            gap = abs(p[i] - p[j])
            if gap > best_gap:
                best_j, best_gap = j, gap
    return best_j


def queue_update(state: FairnessState, selected, refs) -> FairnessState:
    """Advance both queues by one round given the realised selection bitmap."""
    x = np.asarray(selected, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.int64)
    diff = x - x[refs]
    Z = np.maximum(state.Z + diff - state.delta, 0.0)
    Q = np.maximum(state.Q - diff - state.delta, 0.0)
    counts = state.counts + np.asarray(selected, dtype=np.int64)
    return replace(state, Z=Z, Q=Q, counts=counts, round=state.round + 1)


def drift_terms(state: FairnessState, matrix: DistanceMatrix, candidate_selected,
                norm: str = "unsquared", refs: Optional[np.ndarray] = None) -> DriftTerms:
    if refs is None:
        refs = reference_clients(state.frequencies, matrix.values(norm), state.epsilon)
    x = np.asarray(candidate_selected, dtype=np.float64)
    diff = x - x[refs]
    return DriftTerms(diff - state.delta, -diff - state.delta, refs)


def drift_penalty(state: FairnessState, terms: DriftTerms) -> float:
    return float(state.Z @ terms.m + state.Q @ terms.n)


def drift_bound_constant(terms: DriftTerms) -> float:
    return float(0.5 * (terms.m @ terms.m + terms.n @ terms.n))


def audit_if(state: FairnessState, matrix: DistanceMatrix, epsilon: Optional[float] = None,
             delta_audit: Optional[float] = None, norm: str = "unsquared") -> List[Violation]:
    """All pairs ``i < j`` within ``epsilon`` whose frequencies differ by more than ``delta_audit``."""
    epsilon = state.epsilon if epsilon is None else epsilon
    delta_audit = state.delta if delta_audit is None else delta_audit
    values = matrix.values(norm)
    p = state.frequencies
    close = values <= epsilon
    gaps = np.abs(p[:, None] - p[None, :])
    ii, jj = np.nonzero(np.triu(close & (gaps > delta_audit), k=1))
    return [Violation(int(i), int(j), float(values[i, j]), float(gaps[i, j])) for i, j in zip(ii, jj)]


def sigma_metric(counts, values: np.ndarray, epsilon: float) -> float:
    """Root-mean-square gap between each count and its strict epsilon-neighbourhood mean."""
    c = np.asarray(counts, dtype=np.float64)
    near = values < epsilon
    np.fill_diagonal(near, True)
    local_mean = (near @ c) / near.sum(axis=1)
    return float(np.sqrt(np.mean((c - local_mean) ** 2)))
