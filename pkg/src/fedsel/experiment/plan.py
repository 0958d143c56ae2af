"""Experiment plans: what data, which strategies, how many seeded repeats.

A plan is a small TOML (or JSON) document::

    name = "quadratic-demo"
    repeats = 2
    seed = 0
    plots = ["loss_curves", "sigma_curves"]

    [data]
    kind = "quadratic"        # or digits, blobs, idx, cifar
    dim = 10

    [federation]
    n_clients = 100
    subset_size = 10
    rounds = 200

    [[strategies]]
    kind = "longfed"

    [[strategies]]
    kind = "divfl"

Strategy tables may also override federation keys (``V``, ``epsilon``,
``delta``, ...) for that strategy only.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from fedsel import datasets
from fedsel.exceptions import ConfigurationError
from fedsel.federation import FederationConfig
from fedsel.objectives import ClientObjective, Model, build_model, dataset_objectives, quadratic_objectives
from fedsel.partition import PartitionSpec, SyntheticQuadraticSpec, make_quadratics, partition
from fedsel.selector import StrategyConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_OUT = "fedsel-out"
PLOT_KINDS = ("accuracy_curves", "loss_curves", "sigma_curves", "selection_heatmap", "embedding_scatter")
DATA_KINDS = ("quadratic", "digits", "blobs", "idx", "cifar")

_FED_FIELDS = {f.name for f in fields(FederationConfig)} - {"strategy"}
_STRATEGY_FIELDS = {f.name for f in fields(StrategyConfig)}


@dataclass
class CellSpec:
    """One strategy column of the plan with its federation overrides."""

    strategy: StrategyConfig
    overrides: Dict[str, Any] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.strategy.label


@dataclass
class ExperimentPlan:
    name: str
    data: Dict[str, Any]
    federation: Dict[str, Any]
    cells: List[CellSpec]
    partition: Dict[str, Any] = field(default_factory=dict)
    model: Dict[str, Any] = field(default_factory=dict)
    repeats: int = 1
    seed: int = 0
    output_dir: Optional[Path] = None
    plots: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.cells:
            raise ConfigurationError("a plan needs at least one strategy")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        labels = [c.label for c in self.cells]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"strategy labels must be unique, got {labels}")
        if self.data.get("kind", "quadratic") not in DATA_KINDS:
            raise ConfigurationError(f"unknown data kind {self.data.get('kind')!r}")
        unknown = set(self.federation) - _FED_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown federation keys {sorted(unknown)}")
        bad_plots = set(self.plots) - set(PLOT_KINDS)
        if bad_plots:
            raise ConfigurationError(f"unknown plot kinds {sorted(bad_plots)}")
        if self.output_dir is None:
            self.output_dir = Path(os.environ.get("FEDSEL_OUT", DEFAULT_OUT))
        self.output_dir = Path(self.output_dir)
        for c in self.cells:
            self.federation_config(c, self.seed)

    def repeat_seed(self, repeat: int) -> int:
        return self.seed + repeat

    def federation_config(self, cell: CellSpec, seed: int) -> FederationConfig:
        return FederationConfig(**{**self.federation, **cell.overrides, "strategy": cell.strategy,
                                   "seed": seed})

    @property
    def n_clients(self) -> int:
        return int(self.federation.get("n_clients", FederationConfig.n_clients))

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ExperimentPlan":
        doc = dict(doc)
        cells = [_parse_cell(s) for s in doc.pop("strategies", [])]
        known = {"name", "data", "federation", "partition", "model", "repeats", "seed",
                 "output_dir", "plots"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown plan keys {sorted(unknown)}")
        return cls(name=doc.get("name", "plan"), data=dict(doc.get("data", {})),
                   federation=dict(doc.get("federation", {})), cells=cells,
                   partition=dict(doc.get("partition", {})), model=dict(doc.get("model", {})),
                   repeats=int(doc.get("repeats", 1)), seed=int(doc.get("seed", 0)),
                   output_dir=doc.get("output_dir"), plots=list(doc.get("plots", [])))

    def with_overrides(self, seed: Optional[int] = None, output_dir=None,
                       strategies: Optional[List[str]] = None) -> "ExperimentPlan":
        cells = self.cells if not strategies else [_parse_cell({"kind": s}) for s in strategies]
        return replace(self, seed=self.seed if seed is None else seed,
                       output_dir=self.output_dir if output_dir is None else Path(output_dir),
                       cells=cells)


def _parse_cell(entry) -> CellSpec:
    if isinstance(entry, str):
        entry = {"kind": entry}
    entry = dict(entry)
    overrides = {k: entry.pop(k) for k in list(entry) if k in _FED_FIELDS and k not in _STRATEGY_FIELDS}
    # keys on both configs apply to both
    for shared in ("V", "objective_norm"):
        if shared in entry:
            overrides[shared] = entry[shared]
    unknown = set(entry) - _STRATEGY_FIELDS
    if unknown:
        raise ConfigurationError(f"unknown strategy keys {sorted(unknown)}")
    kind = entry.pop("kind", "longfed")
    return CellSpec(StrategyConfig.parse(kind, **entry), overrides)


def load_plan(path) -> ExperimentPlan:
    """Read a ``.toml`` or ``.json`` plan file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read plan {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw)
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse plan {path}: {exc}") from exc
    return ExperimentPlan.from_dict(doc)


def cell_key(label: str, repeat: int) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", label)
    return f"{safe}-r{repeat}"


@dataclass
class Instance:
    """Everything a federation run needs besides its config."""

    objectives: List[ClientObjective]
    initial_params: Optional[np.ndarray] = None
    model: Optional[Model] = None
    eval_data: Optional[Tuple[np.ndarray, np.ndarray]] = None
    embedding: Optional[np.ndarray] = None
    clusters: Optional[np.ndarray] = None
    optimum: Optional[np.ndarray] = None


def build_instance(plan: ExperimentPlan, seed: int) -> Instance:
    """Materialise the clients for one repeat seed (shared by all strategies)."""
    data = dict(plan.data)
    kind = data.pop("kind", "quadratic")
    n = plan.n_clients
    if kind == "quadratic":
        spec = SyntheticQuadraticSpec(n_clients=n, seed=seed, **data)
        problem = make_quadratics(spec)
        return Instance(quadratic_objectives(problem), np.zeros(spec.dim), embedding=problem.embedding,
                        clusters=problem.clusters, optimum=problem.optimum)

    test_fraction = float(data.pop("test_fraction", 0.2))
    if kind == "digits":
        X, y = datasets.load_digits()
    elif kind == "blobs":
        X, y = datasets.make_blobs(seed=seed, **data)
    elif kind == "idx":
        X, y = datasets.load_idx_pair(data["images"], data["labels"])
    else:
        X, y = datasets.load_cifar_batches(*data["paths"])
    X_tr, y_tr, X_te, y_te = datasets.train_test_split(X, y, test_fraction, seed)
    part = dict(plan.partition)
    spec = PartitionSpec(part.pop("scheme", "iid"), n_clients=n, seed=seed, **part)
    clients = partition(X_tr, y_tr, spec)
    n_classes = int(max(y.max() + 1, 2))
    model = build_model(plan.model.get("kind", "logistic"), X.shape[1], n_classes)
    eval_data = (X_te, y_te) if len(y_te) else None
    return Instance(dataset_objectives(model, clients), model=model, eval_data=eval_data)
