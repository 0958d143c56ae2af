"""Execute a plan cell by cell, persisting as it goes.

Each cell (strategy x repeat) writes, under the plan's output directory:

* ``<key>.csv``: its metrics rows (written last, so it marks completion);
* ``<key>.decisions.jsonl``: one selection decision per round;
* ``<key>.matrix.csv``: the final distance matrix snapshot.

A diverged cell writes ``<key>.failed.json`` instead. Re-running a plan skips
cells that already have either file.
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from fedsel.distance import export_matrix_csv
from fedsel.exceptions import DivergenceError, FedselError
from fedsel.experiment.metrics import MetricsTable, export_csv, parse_csv
from fedsel.experiment.plan import ExperimentPlan, Instance, build_instance, cell_key
from fedsel.experiment.plots import emit_plots
from fedsel.federation import run

log = logging.getLogger(__name__)


class CellIOError(FedselError, OSError):
    """Persisting a cell's outputs failed."""


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def decision_line(strategy: str, record) -> str:
    objective = record.objective
    return json.dumps({
        "round": record.round,
        "strategy": strategy,
        "subset": [int(j) for j in record.subset],
        "weights": {str(k): float(v) for k, v in sorted(record.weights.items())},
        "objective": None if objective is None or math.isnan(objective) else float(objective),
        "mean_Z": record.mean_Z,
        "mean_Q": record.mean_Q,
    })


def write_embedding(path: Path, instance: Instance):
    lines = ["client,x,y,cluster"]
    for i, (x, y) in enumerate(instance.embedding):
        lines.append(f"{i},{x!r},{y!r},{int(instance.clusters[i])}")
    _atomic_write(path, "\n".join(lines) + "\n")


def read_embedding(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return np.column_stack([data["x"], data["y"]]), data["cluster"].astype(np.int64)


def run_plan(plan: ExperimentPlan, progress: Optional[Callable[[str], None]] = None) -> MetricsTable:
    """Run every ``(strategy, repeat)`` cell and return the combined table.

    Strategies within a repeat share the client instance and the initial
    parameters. The combined table is also written to ``metrics.csv``.
    """
    out = plan.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CellIOError(f"cannot create output directory {out}: {exc}") from exc
    table = MetricsTable(n_clients=plan.n_clients)
    instance0 = None

    for repeat in range(plan.repeats):
        seed = plan.repeat_seed(repeat)
        instance = None
        for cell in plan.cells:
            key = cell_key(cell.label, repeat)
            csv_path, failed_path = out / f"{key}.csv", out / f"{key}.failed.json"
            if csv_path.exists():
                table.extend(parse_csv(csv_path, plan.n_clients))
                _note(progress, f"{key}: already complete")
                continue
            if failed_path.exists():
                table.failed[key] = json.loads(failed_path.read_text())["error"]
                _note(progress, f"{key}: previously failed")
                continue
            if instance is None:
                instance = build_instance(plan, seed)
            config = plan.federation_config(cell, seed)
            try:
                result = run(config, instance.objectives, instance.initial_params, instance.model,
                             instance.eval_data)
            except DivergenceError as exc:
                log.warning("cell %s diverged: %s", key, exc)
                table.failed[key] = str(exc)
                _write(failed_path, json.dumps({"cell": key, "error": str(exc)}) + "\n", key)
                continue
            cell_table = MetricsTable(n_clients=plan.n_clients)
            cell_table.add_records(cell.label, repeat, result.records, plan.n_clients)
            _write(out / f"{key}.decisions.jsonl",
                   "".join(decision_line(cell.label, r) + "\n" for r in result.records), key)
            try:
                export_matrix_csv(result.matrix, out / f"{key}.matrix.csv")
            except OSError as exc:
                raise CellIOError(f"cell {key}: {exc}") from exc
            _write(csv_path, export_csv(cell_table), key)
            table.extend(cell_table)
            _note(progress, f"{key}: done")
        if repeat == 0:
            instance0 = instance

    if len(table):
        _write(out / "metrics.csv", export_csv(table), "metrics")
    if plan.plots and len(table):
        if instance0 is None and any(k == "embedding_scatter" for k in plan.plots):
            instance0 = build_instance(plan, plan.repeat_seed(0))
        embedding = instance0.embedding if instance0 is not None else None
        clusters = instance0.clusters if instance0 is not None else None
        if embedding is not None:
            write_embedding(out / "embedding.csv", instance0)
        for kind in plan.plots:
            if kind == "accuracy_curves" and np.all(np.isnan(table.column("accuracy"))):
                log.warning("skipping accuracy_curves: no evaluation data")
                continue
            if kind == "embedding_scatter" and embedding is None:
                log.warning("skipping embedding_scatter: instance has no embedding")
                continue
            emit_plots(table, kind, out, embedding, clusters)
    return table


def _write(path: Path, text: str, key: str):
    try:
        _atomic_write(path, text)
    except OSError as exc:
        raise CellIOError(f"cell {key}: cannot write {path}: {exc}") from exc


def _note(progress, message: str):
    log.info(message)
    if progress is not None:
        progress(message)
