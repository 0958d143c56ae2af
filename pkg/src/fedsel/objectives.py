"""Per-client trainable objectives with analytic gradients.

Parameters are always a flat float64 vector; each model knows how to unpack
it. Local training reports a pseudo-gradient (parameter displacement divided
by the step size) so that a server step with the same step size reproduces
FedAvg exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from fedsel.exceptions import ConfigurationError, DivergenceError
from fedsel.partition import ClientDataset, QuadraticProblem

GRADIENT_CONVENTIONS = ("displacement", "last_step")


@dataclass
class ModelParams:
    flat: np.ndarray
    shape_tag: str

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.ndim != 1 or self.flat.size == 0:
            raise ConfigurationError("parameters must be a non-empty flat vector")
        if not np.all(np.isfinite(self.flat)):
            raise ConfigurationError("parameters contain non-finite entries")


@dataclass
class LocalUpdateResult:
    client_id: int
    gradient: np.ndarray
    loss_before: float
    steps_taken: int


def _uniform_fan_in(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Architecture: parameter layout, loss, gradient and prediction."""

    shape_tag = "model"

    def n_params(self) -> int:
        raise NotImplementedError

    def init_params(self, rng) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w, X, y) -> float:
        raise NotImplementedError

    def gradient(self, w, X, y) -> np.ndarray:
        raise NotImplementedError

    def predict(self, w, X) -> np.ndarray:
        raise NotImplementedError

    def scores(self, w, X) -> np.ndarray:
        """Raw per-class scores (classifiers only)."""
        raise NotImplementedError

    def check_features(self, X):
        if X.shape[1] != self.n_features:
            raise ConfigurationError(
                f"{self.shape_tag} expects {self.n_features} features, got {X.shape[1]}")


class LinearRegression(Model):
    """Least squares with loss ``0.5 * mean((Xw + b - y)^2)``."""

    shape_tag = "linear"

    def __init__(self, n_features: int):
        self.n_features = n_features

    def n_params(self):
        return self.n_features + 1

    def init_params(self, rng):
        return np.concatenate([_uniform_fan_in(rng, self.n_features, self.n_features), [0.0]])

    def _residual(self, w, X, y):
        self.check_features(X)
        return X @ w[:-1] + w[-1] - y

    def loss(self, w, X, y):
        r = self._residual(w, X, y)
        return float(0.5 * np.mean(r * r))

    def gradient(self, w, X, y):
        r = self._residual(w, X, y)
        return np.concatenate([X.T @ r, [r.sum()]]) / len(y)

    def predict(self, w, X):
        self.check_features(X)
        return X @ w[:-1] + w[-1]


class SoftmaxRegression(Model):
    """Multinomial logistic regression with mean cross-entropy loss."""

    shape_tag = "logistic"

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes

    def n_params(self):
        return (self.n_features + 1) * self.n_classes

    def _unpack(self, w):
        d, c = self.n_features, self.n_classes
        return w[:d * c].reshape(d, c), w[d * c:]

    def init_params(self, rng):
        d, c = self.n_features, self.n_classes
        return np.concatenate([_uniform_fan_in(rng, d, d * c), np.zeros(c)])

    def logits(self, w, X):
        self.check_features(X)
        W, b = self._unpack(w)
        return X @ W + b

    def loss(self, w, X, y):
        z = self.logits(w, X)
        return float(np.mean(logsumexp(z, axis=1) - z[np.arange(len(y)), y]))

    def gradient(self, w, X, y):
        z = self.logits(w, X)
        p = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        p[np.arange(len(y)), y] -= 1.0
        p /= len(y)
        return np.concatenate([(X.T @ p).ravel(), p.sum(axis=0)])

    def scores(self, w, X):
        return self.logits(w, X)

    def predict(self, w, X):
        return np.argmax(self.logits(w, X), axis=1)


class MLP(Model):
    """Two hidden ReLU layers (64 and 30 units by default) and a softmax head."""

    shape_tag = "mlp"

    def __init__(self, n_features: int, n_classes: int, hidden: Sequence[int] = (64, 30)):
        self.n_features = n_features
        self.n_classes = n_classes
        self.sizes = [n_features, *hidden, n_classes]

    def _shapes(self) -> List[Tuple[Tuple[int, int], int]]:
        return [((a, b), b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]

    def n_params(self):
        return sum(a * b + b for (a, b), _ in self._shapes())

    def _unpack(self, w):
        layers, pos = [], 0
        for (a, b), nb in self._shapes():
            W = w[pos:pos + a * b].reshape(a, b)
            pos += a * b
            layers.append((W, w[pos:pos + nb]))
            pos += nb
        return layers

    def init_params(self, rng):
        parts = []
        for (a, b), nb in self._shapes():
            parts.append(_uniform_fan_in(rng, a, a * b))
            parts.append(_uniform_fan_in(rng, a, nb))
        return np.concatenate(parts)

    def _forward(self, w, X):
        self.check_features(X)
        layers = self._unpack(w)
        acts, pre = [X], []
        h = X
        for k, (W, b) in enumerate(layers):
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0) if k < len(layers) - 1 else z
            acts.append(h)
        return layers, acts, pre

    def loss(self, w, X, y):
        _, acts, _ = self._forward(w, X)
        z = acts[-1]
        return float(np.mean(logsumexp(z, axis=1) - z[np.arange(len(y)), y]))

    def gradient(self, w, X, y):
        layers, acts, pre = self._forward(w, X)
        z = acts[-1]
        delta = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        delta[np.arange(len(y)), y] -= 1.0
        delta /= len(y)
        grads = []
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append(delta.sum(axis=0))
            grads.append((acts[k].T @ delta).ravel())
            if k > 0:
                delta = (delta @ W.T) * (pre[k - 1] > 0)
        return np.concatenate(grads[::-1])

    def scores(self, w, X):
        return self._forward(w, X)[1][-1]

    def predict(self, w, X):
        return np.argmax(self.scores(w, X), axis=1)


def build_model(kind: str, n_features: int, n_classes: int = 1) -> Model:
    kind = kind.lower()
    if kind in ("linear", "linreg", "regression"):
        return LinearRegression(n_features)
    if kind in ("logistic", "softmax", "logreg"):
        return SoftmaxRegression(n_features, n_classes)
    if kind == "mlp":
        return MLP(n_features, n_classes)
    raise ConfigurationError(f"unknown model kind {kind!r}")


class ClientObjective:
    """A client's local objective ``f_i``; subclasses supply loss/gradient."""

    client_id: int
    n_samples: int
    shape_tag: str

    def loss(self, w, batch=None) -> float:
        raise NotImplementedError

    def gradient(self, w, batch=None) -> np.ndarray:
        raise NotImplementedError


class DatasetObjective(ClientObjective):
    def __init__(self, model: Model, data: ClientDataset):
        model.check_features(data.X)
        self.model = model
        self.data = data
        self.client_id = data.client_id
        self.n_samples = len(data)
        self.shape_tag = model.shape_tag

    def _select(self, batch):
        if batch is None:
            return self.data.X, self.data.y
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size == 0:
            raise ConfigurationError("empty batch")
        return self.data.X[batch], self.data.y[batch]

    def loss(self, w, batch=None):
        return self.model.loss(w, *self._select(batch))

    def gradient(self, w, batch=None):
        return self.model.gradient(w, *self._select(batch))


class QuadraticObjective(ClientObjective):
    """``f(w) = 0.5 * ||w - center||^2`` treated as a single-sample dataset."""

    shape_tag = "quadratic"
    n_samples = 1

    def __init__(self, client_id: int, center):
        self.client_id = client_id
        self.center = np.asarray(center, dtype=np.float64)

    def _check(self, w, batch):
        if batch is not None and len(batch) == 0:
            raise ConfigurationError("empty batch")
        if np.shape(w) != self.center.shape:
            raise ConfigurationError(
                f"parameter dimension {np.shape(w)} does not match {self.center.shape}")

    def loss(self, w, batch=None):
        self._check(w, batch)
        diff = w - self.center
        return float(0.5 * diff @ diff)

    def gradient(self, w, batch=None):
        self._check(w, batch)
        return w - self.center


def quadratic_objectives(problem: QuadraticProblem) -> List[QuadraticObjective]:
    return [QuadraticObjective(i, b) for i, b in enumerate(problem.centers)]


def dataset_objectives(model: Model, clients: Sequence[ClientDataset]) -> List[DatasetObjective]:
    return [DatasetObjective(model, c) for c in clients]


def loss(params, objective: ClientObjective) -> float:
    w = params.flat if isinstance(params, ModelParams) else params
    return objective.loss(w)


def gradient(params, objective: ClientObjective, batch=None) -> np.ndarray:
    w = params.flat if isinstance(params, ModelParams) else params
    return objective.gradient(w, batch)


def local_train(params, objective: ClientObjective, epochs: int, batch_size: Optional[int],
                lr: float, seed=None, convention: str = "displacement",
                round_index: Optional[int] = None) -> LocalUpdateResult:
    """Run ``epochs`` passes of shuffled mini-batch SGD from ``params``.

    The returned gradient is ``(params - final) / lr`` under the displacement
    convention, or the last mini-batch gradient under ``last_step``.
    """
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    if lr <= 0:
        raise ConfigurationError("lr must be positive")
    if convention not in GRADIENT_CONVENTIONS:
        raise ConfigurationError(f"unknown gradient convention {convention!r}")
    w0 = np.array(params.flat if isinstance(params, ModelParams) else params, dtype=np.float64)
    loss_before = objective.loss(w0)
    if not np.isfinite(loss_before):
        raise DivergenceError(
            f"non-finite loss on client {objective.client_id} (round {round_index})",
            objective.client_id, round_index)

    rng = np.random.default_rng(seed)
    n = objective.n_samples
    bs = n if batch_size is None or batch_size >= n else int(batch_size)
    w = w0.copy()
    steps = 0
    last = None
    for _ in range(epochs):
        if bs == n:
            batches = [None]
        else:
            order = rng.permutation(n)
            batches = [order[s:s + bs] for s in range(0, n, bs)]
        for batch in batches:
            last = objective.gradient(w, batch)
            w -= lr * last
            steps += 1
        if not np.all(np.isfinite(w)):
            raise DivergenceError(
                f"parameters diverged on client {objective.client_id} (round {round_index})",
                objective.client_id, round_index)
    if convention == "displacement":
        grad = (w0 - w) / lr
    else:
        grad = last
    return LocalUpdateResult(objective.client_id, grad, loss_before, steps)
