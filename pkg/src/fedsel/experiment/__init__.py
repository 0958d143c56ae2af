"""Plans, sweeps, metrics persistence, plots and the command line."""

from fedsel.experiment.bench import BenchResult, bench_select, loglog_slope
from fedsel.experiment.metrics import (
    CSV_COLUMNS,
    SCHEMA_VERSION,
    MetricsRow,
    MetricsTable,
    bitmap_to_hex,
    cluster_coverage,
    export_csv,
    hex_to_bitmap,
    parse_csv,
)
from fedsel.experiment.plan import ExperimentPlan, Instance, build_instance, load_plan
from fedsel.experiment.plots import emit_plots
from fedsel.experiment.runner import CellIOError, run_plan

__all__ = [
    "BenchResult", "bench_select", "loglog_slope",
    "CSV_COLUMNS", "SCHEMA_VERSION", "MetricsRow", "MetricsTable", "bitmap_to_hex",
    "cluster_coverage", "export_csv", "hex_to_bitmap", "parse_csv",
    "ExperimentPlan", "Instance", "build_instance", "load_plan",
    "emit_plots", "CellIOError", "run_plan",
]
