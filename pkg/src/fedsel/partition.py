"""Client data partitioning and synthetic client objectives.

Four labelled-data regimes are supported (IID, one or two label-pure shards
per client, and per-class Dirichlet allocation) together with a generator of
planted-cluster quadratic problems whose global optimum is known in closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fedsel.exceptions import ConfigurationError

DIRICHLET_MAX_RETRIES = 100


class Scheme(str, Enum):
    IID = "iid"
    ONE_SHARD = "1spc"
    TWO_SHARDS = "2spc"
    DIRICHLET = "dirichlet"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = str(value).strip().lower()
        aliases = {
            "iid": cls.IID,
            "1spc": cls.ONE_SHARD,
            "oneshardperclient": cls.ONE_SHARD,
            "2spc": cls.TWO_SHARDS,
            "twoshardsperclient": cls.TWO_SHARDS,
            "dir": cls.DIRICHLET,
            "dirichlet": cls.DIRICHLET,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ConfigurationError(f"unknown partition scheme {value!r}") from None


@dataclass
class ClientDataset:
    """Samples owned by a single client.

    ``indices`` are positions in the source dataset, which makes the disjoint
    cover property directly checkable.
    """

    client_id: int
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray
    n_classes: Optional[int] = None

    def __post_init__(self):
        if len(self.y) == 0:
            raise ConfigurationError(f"client {self.client_id} has no samples")
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ConfigurationError("X must be 2-D with one row per label")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def label_histogram(self) -> np.ndarray:
        n_classes = self.n_classes or int(self.y.max()) + 1
        return np.bincount(self.y.astype(np.int64), minlength=n_classes)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: Scheme = Scheme.IID
    n_clients: int = 10
    alpha: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if self.n_clients < 1:
            raise ConfigurationError("n_clients must be positive")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0")


def _check_dataset(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ConfigurationError("features must be a 2-D array")
    if len(X) != len(y):
        raise ConfigurationError("features and labels differ in length")
    return X, y


def _build_clients(X, y, assignment: Sequence[np.ndarray], n_classes) -> List[ClientDataset]:
    clients = []
    for cid, idx in enumerate(assignment):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        clients.append(ClientDataset(cid, X[idx], y[idx], idx, n_classes))
    return clients


def _n_classes(y) -> Optional[int]:
    if np.issubdtype(np.asarray(y).dtype, np.integer):
        return int(np.max(y)) + 1
    return None


def partition_iid(X, y, spec: PartitionSpec) -> List[ClientDataset]:
    """Shuffle and split into ``n_clients`` parts whose sizes differ by at most one."""
    X, y = _check_dataset(X, y)
    if len(y) < spec.n_clients:
        raise ConfigurationError(
            f"{len(y)} samples cannot cover {spec.n_clients} clients")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(y))
    parts = np.array_split(order, spec.n_clients)
    return _build_clients(X, y, parts, _n_classes(y))


def _label_pure_shards(y, n_shards: int, rng) -> List[np.ndarray]:
    classes, counts = np.unique(y, return_counts=True)
    size = len(y) // n_shards
    while size > 0 and np.sum(counts // size) < n_shards:
        size -= 1
    if size == 0:
        raise ConfigurationError(
            f"cannot form {n_shards} label-pure shards from {len(y)} samples")
    per_class = counts // size
    # trim surplus shards from the most represented classes
    while per_class.sum() > n_shards:
        per_class[np.argmax(per_class)] -= 1
    shards = []
    for label, k in zip(classes, per_class):
        members = rng.permutation(np.flatnonzero(y == label))
        for s in range(k):
            shards.append(members[s * size:(s + 1) * size])
    return shards


def partition_shards(X, y, spec: PartitionSpec, shards_per_client: int) -> List[ClientDataset]:
    """Label-pure shard partition (1SPC or 2SPC).

    Labels are grouped by class, each class is cut into equal-size shards and
    the shards are dealt to clients by a seeded permutation. Samples that do
    not fill a whole shard are dropped.
    """
    if shards_per_client not in (1, 2):
        raise ConfigurationError("shards_per_client must be 1 or 2")
    X, y = _check_dataset(X, y)
    if not np.issubdtype(y.dtype, np.integer):
        raise ConfigurationError("shard partitioning needs integer class labels")
    rng = np.random.default_rng(spec.seed)
    n_shards = shards_per_client * spec.n_clients
    shards = _label_pure_shards(y, n_shards, rng)
    perm = rng.permutation(n_shards)
    assignment = [
        np.concatenate([shards[s] for s in perm[c * shards_per_client:(c + 1) * shards_per_client]])
        for c in range(spec.n_clients)
    ]
    return _build_clients(X, y, assignment, _n_classes(y))


def dirichlet_allocation(y, n_clients: int, alpha: float, rng) -> np.ndarray:
    """Draw one Dir(alpha) row per class; returns a (n_classes, n_clients) matrix."""
    classes = np.unique(y)
    rows = rng.dirichlet(np.full(n_clients, alpha), size=len(classes))
    return rows / rows.sum(axis=1, keepdims=True)


def partition_dirichlet(X, y, spec: PartitionSpec) -> List[ClientDataset]:
    X, y = _check_dataset(X, y)
    if not np.issubdtype(y.dtype, np.integer):
        raise ConfigurationError("Dirichlet partitioning needs integer class labels")
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(y)
    for _ in range(DIRICHLET_MAX_RETRIES):
        props = dirichlet_allocation(y, spec.n_clients, spec.alpha, rng)
        buckets: List[list] = [[] for _ in range(spec.n_clients)]
        for row, label in zip(props, classes):
            members = rng.permutation(np.flatnonzero(y == label))
            cuts = (np.cumsum(row)[:-1] * len(members)).astype(np.int64)
            for cid, chunk in enumerate(np.split(members, cuts)):
                buckets[cid].append(chunk)
        assignment = [np.concatenate(b) for b in buckets]
        if min(len(a) for a in assignment) > 0:
            return _build_clients(X, y, assignment, _n_classes(y))
    raise ConfigurationError(
        f"Dirichlet(alpha={spec.alpha}) left a client empty after "
        f"{DIRICHLET_MAX_RETRIES} draws")


def partition(X, y, spec: PartitionSpec) -> List[ClientDataset]:
    """Dispatch on ``spec.scheme``."""
    if spec.scheme is Scheme.IID:
        return partition_iid(X, y, spec)
    if spec.scheme is Scheme.ONE_SHARD:
        return partition_shards(X, y, spec, 1)
    if spec.scheme is Scheme.TWO_SHARDS:
        return partition_shards(X, y, spec, 2)
    return partition_dirichlet(X, y, spec)


@dataclass(frozen=True)
class SyntheticQuadraticSpec:
    n_clients: int = 100
    dim: int = 10
    heterogeneity: float = 0.05
    cluster_count: int = 10
    center_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be >= 1")
        if not 1 <= self.cluster_count <= self.n_clients:
            raise ConfigurationError("cluster_count must lie in [1, n_clients]")
        if self.heterogeneity < 0:
            raise ConfigurationError("heterogeneity must be nonnegative")


@dataclass
class QuadraticProblem:
    """Planted-cluster quadratics ``f_i(w) = 0.5 * ||w - b_i||^2``."""

    centers: np.ndarray
    clusters: np.ndarray
    optimum: np.ndarray
    embedding: np.ndarray = field(repr=False)

    @property
    def n_clients(self) -> int:
        return len(self.centers)

    def global_loss(self, w) -> float:
        return float(0.5 * np.mean(np.sum((np.asarray(w) - self.centers) ** 2, axis=1)))


def make_quadratics(spec: SyntheticQuadraticSpec) -> QuadraticProblem:
    """Cluster centres are standard normal draws scaled by ``center_scale``;
    client ``i`` belongs to cluster ``i * C // N`` and is offset by
    ``heterogeneity`` times standard normal noise.
    """
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_clients, spec.cluster_count
    cluster_centers = spec.center_scale * rng.standard_normal((c, spec.dim))
    clusters = np.arange(n) * c // n
    noise = rng.standard_normal((n, spec.dim))
    centers = cluster_centers[clusters] + spec.heterogeneity * noise

    angles = 2 * np.pi * clusters / c
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * (c > 1)
    jitter = noise[:, :2] if spec.dim >= 2 else np.hstack([noise, np.zeros((n, 1))])
    embedding = ring + 0.15 * jitter
    return QuadraticProblem(centers, clusters, centers.mean(axis=0), embedding)
