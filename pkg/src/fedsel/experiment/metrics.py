"""Per-round metrics table, its CSV encoding, and selection-log analysis."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from fedsel.exceptions import ConfigurationError, FedselError

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "strategy", "repeat", "round", "loss", "accuracy", "dub", "sigma",
    "max_Z", "max_Q", "select_ms", "round_ms", "selected_bitmap_hex",
)
_FLOAT_COLUMNS = ("loss", "accuracy", "dub", "sigma", "max_Z", "max_Q", "select_ms", "round_ms")


def bitmap_to_hex(selected, n_clients: Optional[int] = None) -> str:
    """Hex encoding of a 0/1 vector with client 0 as the least significant bit.

    The width is two hex digits per started byte of ``n_clients``.
    """
    x = np.asarray(selected).astype(bool)
    n = len(x) if n_clients is None else n_clients
    value = 0
    for i in np.flatnonzero(x):
        value |= 1 << int(i)
    width = 2 * max(1, math.ceil(n / 8))
    return format(value, f"0{width}x")


def hex_to_bitmap(text: str, n_clients: Optional[int] = None) -> np.ndarray:
    value = int(text, 16) if text else 0
    n = 4 * len(text) if n_clients is None else n_clients
    if value >> n:
        raise ConfigurationError(f"bitmap {text!r} has bits beyond client {n - 1}")
    return np.array([(value >> i) & 1 for i in range(n)], dtype=np.int64)


@dataclass(frozen=True)
class MetricsRow:
    strategy: str
    repeat: int
    round: int
    loss: Optional[float]
    accuracy: Optional[float]
    dub: Optional[float]
    sigma: Optional[float]
    max_Z: Optional[float]
    max_Q: Optional[float]
    select_ms: Optional[float]
    round_ms: Optional[float]
    selected_bitmap_hex: str

    @property
    def key(self) -> Tuple[str, int, int]:
        return self.strategy, self.repeat, self.round

    @classmethod
    def from_record(cls, strategy: str, repeat: int, record, n_clients: int) -> "MetricsRow":
        def ms(ns):
            return None if ns is None else ns / 1e6

        return cls(strategy, int(repeat), int(record.round), _clean(record.loss),
                   _clean(record.accuracy), _clean(record.dub_value), _clean(record.sigma),
                   _clean(record.max_Z), _clean(record.max_Q), ms(record.select_ns),
                   ms(record.round_ns), bitmap_to_hex(record.selected, n_clients))


def _clean(value) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsTable:
    """Rows keyed by ``(strategy, repeat, round)`` in insertion order."""

    schema_version = SCHEMA_VERSION

    def __init__(self, rows: Iterable[MetricsRow] = (), n_clients: Optional[int] = None):
        self.rows: List[MetricsRow] = []
        self._keys = set()
        self._last_round: Dict[Tuple[str, int], int] = {}
        self.n_clients = n_clients
        self.failed: Dict[str, str] = {}
        self.extend(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[MetricsRow]:
        return iter(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricsTable) and self.rows == other.rows

    def append(self, row: MetricsRow):
        if row.key in self._keys:
            raise FedselError(f"duplicate metrics key {row.key}")
        group = (row.strategy, row.repeat)
        if group in self._last_round and row.round <= self._last_round[group]:
            raise FedselError(f"rounds not increasing in group {group}")
        self._keys.add(row.key)
        self._last_round[group] = row.round
        self.rows.append(row)

    def extend(self, rows: Iterable[MetricsRow]):
        for row in rows:
            self.append(row)

    def add_records(self, strategy: str, repeat: int, records, n_clients: int):
        if self.n_clients is None:
            self.n_clients = n_clients
        for rec in records:
            self.append(MetricsRow.from_record(strategy, repeat, rec, n_clients))

    @property
    def strategies(self) -> List[str]:
        return list(dict.fromkeys(r.strategy for r in self.rows))

    @property
    def groups(self) -> List[Tuple[str, int]]:
        return list(dict.fromkeys((r.strategy, r.repeat) for r in self.rows))

    def select(self, strategy: Optional[str] = None, repeat: Optional[int] = None) -> List[MetricsRow]:
        return [r for r in self.rows
                if (strategy is None or r.strategy == strategy) and (repeat is None or r.repeat == repeat)]

    def column(self, name: str, strategy: Optional[str] = None, repeat: Optional[int] = None) -> np.ndarray:
        if name not in {f.name for f in fields(MetricsRow)}:
            raise ConfigurationError(f"unknown column {name!r}")
        values = [getattr(r, name) for r in self.select(strategy, repeat)]
        return np.array([np.nan if v is None else v for v in values], dtype=np.float64)

    def selections(self, strategy: str, repeat: int = 0, include_bootstrap: bool = False) -> np.ndarray:
        """``rounds x clients`` 0/1 raster of selections for one run."""
        rows = [r for r in self.select(strategy, repeat) if include_bootstrap or r.round > 0]
        if not rows:
            return np.zeros((0, self.n_clients or 0), dtype=np.int64)
        return np.array([hex_to_bitmap(r.selected_bitmap_hex, self.n_clients) for r in rows])

    def counts(self, strategy: str, repeat: int = 0) -> np.ndarray:
        return self.selections(strategy, repeat).sum(axis=0)


def export_csv(table: MetricsTable, path=None) -> str:
    """Write the table with the fixed column order; returns the CSV text."""
    if len(table) == 0:
        raise ConfigurationError("cannot export an empty metrics table")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in table:
        writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def parse_csv(source, n_clients: Optional[int] = None) -> MetricsTable:
    """Inverse of :func:`export_csv`; ``source`` is a path or the CSV text."""
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ConfigurationError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for raw in reader:
        values = {c: (float(raw[c]) if raw[c] != "" else None) for c in _FLOAT_COLUMNS}
        rows.append(MetricsRow(raw["strategy"], int(raw["repeat"]), int(raw["round"]),
                               selected_bitmap_hex=raw["selected_bitmap_hex"], **values))
    if n_clients is None and rows:
        n_clients = 4 * len(rows[0].selected_bitmap_hex)
    return MetricsTable(rows, n_clients)


def cluster_coverage(selections: np.ndarray, clusters: Sequence[int], window: int = 10,
                     start: int = 0) -> np.ndarray:
    """Distinct clusters touched in each sliding window of ``window`` rounds.

    ``selections`` is a ``rounds x clients`` raster; ``start`` skips that
    many leading rows.
    """
    sel = np.asarray(selections)[start:]
    clusters = np.asarray(clusters)
    if sel.shape[0] < window:
        return np.zeros(0, dtype=np.int64)
    touched = np.zeros((sel.shape[0], clusters.max() + 1), dtype=bool)
    for t, row in enumerate(sel):
        touched[t, clusters[np.flatnonzero(row)]] = True
    return np.array([np.count_nonzero(touched[s:s + window].any(axis=0))
                     for s in range(sel.shape[0] - window + 1)], dtype=np.int64)
