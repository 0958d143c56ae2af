"""The federated training loop: bootstrap, select, train, refresh, aggregate.

Server and clients talk through plain request/reply messages so the
in-process simulation has the same boundary a networked deployment would.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from fedsel.distance import DistanceMatrix, dub, full_refresh, partial_update
from fedsel.exceptions import ConfigurationError, DivergenceError
from fedsel.fairness import FairnessState, queue_update, reference_clients, sigma_metric
from fedsel.objectives import (
    GRADIENT_CONVENTIONS,
    ClientObjective,
    DatasetObjective,
    LocalUpdateResult,
    Model,
    ModelParams,
    local_train,
)
from fedsel.selector import (
    BaseSelector,
    SelectionDecision,
    StrategyConfig,
    make_selector,
)

SEED_INIT, SEED_SELECT, SEED_TRAIN = 0, 1, 2


@dataclass
class FederationConfig:
    n_clients: int = 100
    subset_size: int = 10
    rounds: int = 100
    local_epochs: int = 3
    batch_size: Optional[int] = 64
    lr: float = 0.005
    lr_schedule: str = "constant"
    beta: float = 1.0
    gamma: float = 1.0
    V: float = 0.8
    epsilon: float = 0.3
    delta: float = 0.01
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    seed: int = 0
    objective_norm: str = "unsquared"
    gradient_convention: str = "displacement"
    count_bootstrap: bool = False
    bootstrap_update: bool = True
    refresh_period: int = 0
    eval_stride: int = 1
    sigma_epsilon: Optional[float] = None
    record_timing: bool = False

    def __post_init__(self):
        if not 1 <= self.subset_size <= self.n_clients:
            raise ConfigurationError("subset_size must lie in [1, n_clients]")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigurationError("local_epochs must be >= 1")
        if self.lr_schedule not in ("constant", "diminishing"):
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.lr_schedule == "diminishing" and (self.beta <= 0 or self.gamma <= 0):
            raise ConfigurationError("diminishing schedule needs beta > 0 and gamma > 0")
        if self.lr_schedule == "constant" and self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if not 0.0 <= self.V <= 1.0:
            raise ConfigurationError("V must lie in [0, 1]")
        if self.gradient_convention not in GRADIENT_CONVENTIONS:
            raise ConfigurationError(f"unknown gradient convention {self.gradient_convention!r}")
        if self.eval_stride < 1:
            raise ConfigurationError("eval_stride must be >= 1")
        self.strategy = replace(
            self.strategy,
            K=self.subset_size if self.strategy.K is None else self.strategy.K,
            V=self.V if self.strategy.V is None else self.strategy.V,
            objective_norm=self.objective_norm,
        )
        if self.strategy.K != self.subset_size:
            raise ConfigurationError("strategy K differs from subset_size")

    def learning_rate(self, t: int) -> float:
        if self.lr_schedule == "diminishing":
            return self.beta / (t + self.gamma)
        return self.lr


@dataclass
class RoundRecord:
    round: int
    selected: np.ndarray
    loss: float
    accuracy: Optional[float]
    dub_value: float
    sigma: float
    max_Z: float
    max_Q: float
    mean_Z: float
    mean_Q: float
    select_ns: Optional[int] = None
    round_ns: Optional[int] = None
    subset: List[int] = field(default_factory=list)
    weights: Dict[int, float] = field(default_factory=dict)
    objective: float = float("nan")


@dataclass
class TrainRequest:
    round: int
    params: np.ndarray
    lr: float
    epochs: int
    batch_size: Optional[int]
    seed: Tuple[int, ...]
    convention: str


@dataclass
class TrainReply:
    client_id: int
    result: LocalUpdateResult


class SimulatedClient:
    """Client role: owns its objective and answers training requests."""

    def __init__(self, objective: ClientObjective):
        self.objective = objective
        self.client_id = objective.client_id

    def handle(self, request: TrainRequest) -> TrainReply:
        result = local_train(request.params, self.objective, request.epochs, request.batch_size,
                             request.lr, seed=list(request.seed), convention=request.convention,
                             round_index=request.round)
        return TrainReply(self.client_id, result)

    def current_loss(self, params) -> float:
        return self.objective.loss(params)


def aggregate(params, results: Mapping[int, LocalUpdateResult], weights: Mapping[int, float],
              lr: float) -> np.ndarray:
    """``w - lr * sum_j (theta_j / N) g_j`` with ``N = sum_j theta_j``.

    Clients are reduced in index order so the sum is scheduling-independent.
    """
    w = np.array(params.flat if isinstance(params, ModelParams) else params, dtype=np.float64)
    missing = set(weights) - set(results)
    if missing:
        raise ConfigurationError(f"missing results for clients {sorted(missing)}")
    total = float(sum(weights.values()))
    step = np.zeros_like(w)
    for j in sorted(weights):
        step += (weights[j] / total) * results[j].gradient
    return w - lr * step


def evaluate(model: Model, params, X, y) -> Tuple[float, float]:
    """Mean loss and top-1 accuracy on held-out data."""
    if X is None or len(y) == 0:
        raise ConfigurationError("empty evaluation set")
    w = params.flat if isinstance(params, ModelParams) else params
    loss = model.loss(w, X, y)
    acc = float(np.mean(model.predict(w, X) == y))
    return loss, acc


@dataclass
class FederationResult:
    params: ModelParams
    records: List[RoundRecord]
    matrix: DistanceMatrix
    state: FairnessState


def _train_all(clients, ids, params, t, lr, config) -> Dict[int, LocalUpdateResult]:
    out = {}
    for j in ids:
        req = TrainRequest(t, params, lr, config.local_epochs, config.batch_size,
                           (config.seed, SEED_TRAIN, t, int(j)), config.gradient_convention)
        reply = clients[j].handle(req)
        out[reply.client_id] = reply.result
    return out


def run(config: FederationConfig, objectives: Sequence[ClientObjective],
        initial_params: Optional[np.ndarray] = None, model: Optional[Model] = None,
        eval_data: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        selector: Optional[BaseSelector] = None) -> FederationResult:
    """Run ``config.rounds`` selection rounds after a full-participation bootstrap.

    Returns final parameters and one record per aggregation round (``T + 1``).
    """
    n = len(objectives)
    if n == 0:
        raise ConfigurationError("no clients")
    if n != config.n_clients:
        raise ConfigurationError(f"config expects {config.n_clients} clients, got {n}")
    clients = [SimulatedClient(o) for o in objectives]
    selector = selector or make_selector(config.strategy)
    shape_tag = objectives[0].shape_tag

    if initial_params is not None:
        w = np.array(initial_params, dtype=np.float64)
    elif model is not None:
        w = model.init_params(np.random.default_rng([config.seed, SEED_INIT]))
    else:
        raise ConfigurationError("need initial parameters or a model")
    sigma_eps = config.epsilon if config.sigma_epsilon is None else config.sigma_epsilon
    state = FairnessState.initial(n, config.epsilon, config.delta)
    everyone = np.arange(n)
    records: List[RoundRecord] = []

    def global_loss(params):
        return float(np.mean([c.current_loss(params) for c in clients]))

    def record(t, w_new, decision, matrix, state, sel_ns, round_ns):
        bitmap = decision.bitmap(n)
        loss = global_loss(w_new)
        if not np.isfinite(loss):
            raise DivergenceError(f"global loss diverged at round {t}", round_index=t)
        acc = None
        if eval_data is not None and model is not None and t % config.eval_stride == 0:
            acc = evaluate(model, w_new, *eval_data)[1]
        values = matrix.values(config.objective_norm)
        return RoundRecord(
            round=t, selected=bitmap, loss=loss, accuracy=acc,
            dub_value=dub(matrix, decision.subset)[0],
            sigma=sigma_metric(state.counts, values, sigma_eps),
            max_Z=float(state.Z.max()), max_Q=float(state.Q.max()),
            mean_Z=float(state.Z.mean()), mean_Q=float(state.Q.mean()),
            select_ns=sel_ns if config.record_timing else None,
            round_ns=round_ns if config.record_timing else None,
            subset=list(decision.subset), weights=dict(decision.weights),
            objective=decision.objective_value,
        )

    # bootstrap: every client trains once, all distances are computed
    t0 = time.perf_counter_ns()
    lr = config.learning_rate(0)
    results = _train_all(clients, everyone, w, 0, lr, config)
    matrix = full_refresh([results[j].gradient for j in everyone], 0)
    boot = SelectionDecision(list(range(n)), {j: 1.0 for j in range(n)}, float("nan"), "bootstrap")
    if config.bootstrap_update:
        w = aggregate(w, results, boot.weights, lr)
    if config.count_bootstrap:
        refs = reference_clients(state.frequencies, matrix.values(config.objective_norm), state.epsilon)
        state = queue_update(state, np.ones(n, dtype=np.int64), refs)
    records.append(record(0, w, boot, matrix, state, 0, time.perf_counter_ns() - t0))

    for t in range(1, config.rounds + 1):
        t_start = time.perf_counter_ns()
        lr = config.learning_rate(t)
        if config.refresh_period and t % config.refresh_period == 0:
            fresh = _train_all(clients, everyone, w, t, lr, config)
            matrix = full_refresh([fresh[j].gradient for j in everyone], t)
        losses = None
        if selector.needs_losses:
            losses = np.array([c.current_loss(w) for c in clients])
        rng = np.random.default_rng([config.seed, SEED_SELECT, t])
        refs = reference_clients(state.frequencies, matrix.values(config.objective_norm), state.epsilon)
        s_start = time.perf_counter_ns()
        decision = selector.select(t, matrix, state, losses, rng)
        sel_ns = time.perf_counter_ns() - s_start

        results = _train_all(clients, decision.subset, w, t, lr, config)
        matrix = partial_update(matrix, {j: r.gradient for j, r in results.items()}, t)
        state = queue_update(state, decision.bitmap(n), refs)
        w = aggregate(w, results, decision.weights, lr)
        records.append(record(t, w, decision, matrix, state, sel_ns,
                              time.perf_counter_ns() - t_start))

    return FederationResult(ModelParams(w, shape_tag), records, matrix, state)
