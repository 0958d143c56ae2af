"""Pairwise client gradient distances and the coreset representation bound."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls
from scipy.spatial.distance import cdist

from fedsel.exceptions import ContractViolation, FedselError, NumericalError

NORMS = ("squared", "unsquared")


def _as_matrix(grads) -> np.ndarray:
    if isinstance(grads, np.ndarray):
        G = grads
    else:
        grads = list(grads)
        dims = {np.shape(g) for g in grads}
        if len(dims) > 1:
            raise FedselError(f"gradient dimensions differ: {sorted(dims)}")
        G = np.asarray(grads)
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2:
        raise FedselError("gradients must stack into a 2-D array")
    return G


@dataclass
class DistanceMatrix:
    """Squared gradient distances with the round at which each entry was refreshed.

    Treat instances as immutable: the unsquared view is computed once and
    cached. :func:`partial_update` returns a new matrix.
    """

    dist_sq: np.ndarray
    last_updated: np.ndarray
    _dist: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_clients(self) -> int:
        return self.dist_sq.shape[0]

    @property
    def dist(self) -> np.ndarray:
        if self._dist is None:
            self._dist = np.sqrt(self.dist_sq)
        return self._dist

    def values(self, norm: str = "squared") -> np.ndarray:
        if norm == "squared":
            return self.dist_sq
        if norm == "unsquared":
            return self.dist
        raise ContractViolation(f"unknown norm mode {norm!r}")

    def copy(self) -> "DistanceMatrix":
        return DistanceMatrix(self.dist_sq.copy(), self.last_updated.copy())

    def scaled(self, factor: float) -> "DistanceMatrix":
        """Every squared distance multiplied by ``factor``."""
        return DistanceMatrix(self.dist_sq * factor, self.last_updated.copy())

    @classmethod
    def from_distances(cls, dist, norm: str = "squared", round_index: int = 0) -> "DistanceMatrix":
        """Build from a precomputed symmetric matrix (useful for hand instances)."""
        d = np.asarray(dist, dtype=np.float64)
        sq = d if norm == "squared" else d * d
        return cls(sq.copy(), np.full(sq.shape, round_index, dtype=np.int64))


@dataclass
class RepresentationMap:
    """Assignment of every client to its nearest selected client.

    ``weights[k]`` is the number of clients represented by ``subset[k]``.
    """

    subset: np.ndarray
    rep: np.ndarray
    weights: np.ndarray

    def weight_of(self) -> Dict[int, int]:
        return {int(j): int(w) for j, w in zip(self.subset, self.weights)}


def full_refresh(grads, round_index: int = 0) -> DistanceMatrix:
    G = _as_matrix(grads)
    sq = cdist(G, G, "sqeuclidean")
    np.fill_diagonal(sq, 0.0)
    return DistanceMatrix(sq, np.full(sq.shape, round_index, dtype=np.int64))


def partial_update(matrix: DistanceMatrix, grads_subset: Mapping[int, np.ndarray],
                   round_index: int) -> DistanceMatrix:
    """Refresh only the entries whose endpoints both sent a gradient this round."""
    out = matrix.copy()
    if not grads_subset:
        return out
    ids = np.array(sorted(grads_subset), dtype=np.int64)
    if ids.min() < 0 or ids.max() >= matrix.n_clients:
        raise ContractViolation("client index out of range")
    G = _as_matrix([grads_subset[i] for i in ids])
    block = cdist(G, G, "sqeuclidean")
    np.fill_diagonal(block, 0.0)
    out.dist_sq[np.ix_(ids, ids)] = block
    out.last_updated[np.ix_(ids, ids)] = round_index
    return out


def representation(values: np.ndarray, subset: Sequence[int]) -> RepresentationMap:
    """Nearest-representative map over a distance array.

    Selected clients represent themselves; other ties go to the lowest index.
    """
    S = np.asarray(sorted(int(s) for s in subset), dtype=np.int64)
    if S.size == 0:
        raise ContractViolation("subset must be non-empty")
    local = np.argmin(values[:, S], axis=1)
    rep = S[local]
    rep[S] = S
    weights = np.array([np.count_nonzero(rep == j) for j in S], dtype=np.int64)
    return RepresentationMap(S, rep, weights)


def dub(matrix: DistanceMatrix, subset: Iterable[int], norm: str = "squared") -> Tuple[float, RepresentationMap]:
    """Sum over clients of the distance to the nearest member of ``subset``."""
    subset = list(subset)
    if not subset:
        raise ContractViolation("DUB is undefined for an empty subset")
    values = matrix.values(norm)
    rmap = representation(values, subset)
    total = float(values[np.arange(matrix.n_clients), rmap.rep].sum())
    return total, rmap


def exact_estimation_error(grads, subset: Iterable[int], maxiter: int = None) -> Tuple[float, np.ndarray]:
    """Best nonnegative reweighting of the subset's gradients against the full sum.

    Returns the squared residual and the optimal weights, aligned with the
    sorted subset.
    """
    G = _as_matrix(grads)
    S = sorted(int(s) for s in subset)
    if not S:
        raise ContractViolation("subset must be non-empty")
    if len(set(S)) == len(G):
        # unit weights reproduce the sum exactly; nnls may return another optimum
        return 0.0, np.ones(len(S))
    target = G.sum(axis=0)
    A = G[S].T
    try:
        theta, _ = nnls(A, target, maxiter=maxiter)
    except RuntimeError as exc:
        raise NumericalError(f"NNLS did not converge: {exc}") from exc
    resid = target - A @ theta
    return float(resid @ resid), theta


def counting_residual(grads, rmap: RepresentationMap) -> float:
    """``||sum_i g_i - sum_j |C_j| g_j||`` (unsquared) for the counting weights."""
    G = _as_matrix(grads)
    resid = G.sum(axis=0) - rmap.weights @ G[rmap.subset]
    return float(np.linalg.norm(resid))


def triangle_bound(grads, rmap: RepresentationMap) -> float:
    """``sum_i ||g_i - g_rep(i)||``, the unsquared representation cost."""
    G = _as_matrix(grads)
    return float(np.linalg.norm(G - G[rmap.rep], axis=1).sum())


def export_matrix_csv(matrix: DistanceMatrix, path) -> None:
    """Long-form snapshot: one row per ordered pair ``(i, j)``."""
    n = matrix.n_clients
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "dist_sq", "last_updated"])
        for i in range(n):
            for j in range(n):
                writer.writerow([i, j, repr(float(matrix.dist_sq[i, j])), int(matrix.last_updated[i, j])])


def read_matrix_csv(path) -> DistanceMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = int(np.sqrt(len(rows)))
    if n * n != len(rows):
        raise FedselError(f"{path}: not a square matrix snapshot")
    sq = np.zeros((n, n))
    stamps = np.zeros((n, n), dtype=np.int64)
    for row in rows:
        i, j = int(row["i"]), int(row["j"])
        sq[i, j] = float(row["dist_sq"])
        stamps[i, j] = int(row["last_updated"])
    return DistanceMatrix(sq, stamps)
