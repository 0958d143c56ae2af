"""Federated client selection with gradient coresets and individual fairness.

The core pieces are importable from the package root::

    from fedsel import FederationConfig, StrategyConfig, run
"""

from fedsel.distance import (
    DistanceMatrix,
    RepresentationMap,
    dub,
    exact_estimation_error,
    full_refresh,
    partial_update,
)
from fedsel.exceptions import (
    ConfigurationError,
    ContractViolation,
    DivergenceError,
    FedselError,
    NumericalError,
)
from fedsel.fairness import FairnessState, audit_if, queue_update, reference_clients, sigma_metric
from fedsel.federation import FederationConfig, FederationResult, RoundRecord, aggregate, run
from fedsel.objectives import ModelParams, build_model, local_train
from fedsel.partition import (
    ClientDataset,
    PartitionSpec,
    Scheme,
    SyntheticQuadraticSpec,
    make_quadratics,
    partition,
)
from fedsel.selector import (
    SelectionDecision,
    StrategyConfig,
    brute_force_select,
    greedy_select,
    make_selector,
    objective_g,
    objective_g_bar,
)

__version__ = "0.1.0"

__all__ = [
    "DistanceMatrix", "RepresentationMap", "dub", "exact_estimation_error", "full_refresh",
    "partial_update", "ConfigurationError", "ContractViolation", "DivergenceError", "FedselError",
    "NumericalError", "FairnessState", "audit_if", "queue_update", "reference_clients",
    "sigma_metric", "FederationConfig", "FederationResult", "RoundRecord", "aggregate", "run",
    "ModelParams", "build_model", "local_train", "ClientDataset", "PartitionSpec", "Scheme",
    "SyntheticQuadraticSpec", "make_quadratics", "partition", "SelectionDecision",
    "StrategyConfig", "brute_force_select", "greedy_select", "make_selector", "objective_g",
    "objective_g_bar",
]
