"""Self-contained SVG plots written by hand (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from fedsel.exceptions import ConfigurationError
from fedsel.experiment.metrics import MetricsTable

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick_label(v: float) -> str:
    if v == 0 or 1e-3 <= abs(v) < 1e4:
        return f"{v:.4g}"
    return f"{v:.1e}"


def _header(title: str, width: int = WIDTH, height: int = HEIGHT) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]


class _Frame:
    """Maps data coordinates into the plot area and draws axes."""

    def __init__(self, xlim, ylim, log_y: bool = False):
        self.log_y = log_y
        self.x0, self.x1 = xlim
        self.y0, self.y1 = (math.log10(ylim[0]), math.log10(ylim[1])) if log_y else ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1
        self.left, self.top = MARGIN["left"], MARGIN["top"]
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x: float) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y: float) -> float:
        if self.log_y:
            y = math.log10(y)
        return self.top + self.h - (y - self.y0) / (self.y1 - self.y0) * self.h

    def axes(self, xlabel: str, ylabel: str) -> List[str]:
        out = [f'<rect x="{self.left}" y="{self.top}" width="{self.w}" height="{self.h}" '
               f'fill="none" stroke="black"/>']
        for k in range(5):
            xv = self.x0 + k * (self.x1 - self.x0) / 4
            x = self.px(xv)
            out.append(f'<text x="{_fmt(x)}" y="{self.top + self.h + 16}" text-anchor="middle">'
                       f'{_tick_label(xv)}</text>')
            yr = self.y0 + k * (self.y1 - self.y0) / 4
            yv = 10 ** yr if self.log_y else yr
            y = self.top + self.h - k * self.h / 4
            out.append(f'<text x="{self.left - 6}" y="{_fmt(y + 4)}" text-anchor="end">'
                       f'{_tick_label(yv)}</text>')
        out.append(f'<text x="{self.left + self.w / 2}" y="{HEIGHT - 12}" text-anchor="middle">'
                   f'{escape(xlabel)}</text>')
        out.append(f'<text x="16" y="{self.top + self.h / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {self.top + self.h / 2})">{escape(ylabel)}</text>')
        return out


def line_chart(series: Dict[str, Tuple[np.ndarray, np.ndarray]], title: str, xlabel: str,
               ylabel: str, log_y: bool = False) -> str:
    """One polyline per series; NaN points are skipped."""
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(y) & (y > 0 if log_y else True)
        clean[name] = (x[keep], y[keep])
    xs = np.concatenate([x for x, _ in clean.values()]) if clean else np.zeros(0)
    ys = np.concatenate([y for _, y in clean.values()]) if clean else np.zeros(0)
    if xs.size == 0:
        raise ConfigurationError(f"nothing to plot for {title!r}")
    frame = _Frame((xs.min(), xs.max()), (ys.min(), ys.max()), log_y)
    out = _header(title) + frame.axes(xlabel, ylabel)
    for k, (name, (x, y)) in enumerate(clean.items()):
        colour = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(frame.px(a))},{_fmt(frame.py(b))}" for a, b in zip(x, y))
        out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                   f'stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN["top"] + 16 * k + 10
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(raster: np.ndarray, title: str, xlabel: str = "client", ylabel: str = "round",
            first_row: int = 1) -> str:
    """Rounds (rows) by clients (columns); filled cells are selections."""
    raster = np.asarray(raster)
    rows, cols = raster.shape
    w = WIDTH - MARGIN["left"] - 20
    h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    cw, ch = w / max(cols, 1), h / max(rows, 1)
    out = _header(title)
    left, top = MARGIN["left"], MARGIN["top"]
    out.append(f'<rect x="{left}" y="{top}" width="{_fmt(w)}" height="{_fmt(h)}" fill="#f4f4f4" stroke="black"/>')
    for r, c in zip(*np.nonzero(raster)):
        out.append(f'<rect class="cell" x="{_fmt(left + c * cw)}" y="{_fmt(top + r * ch)}" '
                   f'width="{_fmt(max(cw, 0.5))}" height="{_fmt(max(ch, 0.5))}" fill="#1f3b73"/>')
    out.append(f'<text x="{left}" y="{top + h + 16}">0</text>')
    out.append(f'<text x="{_fmt(left + w)}" y="{top + h + 16}" text-anchor="end">{cols - 1}</text>')
    out.append(f'<text x="{left - 6}" y="{top + 10}" text-anchor="end">{first_row}</text>')
    out.append(f'<text x="{left - 6}" y="{_fmt(top + h)}" text-anchor="end">{first_row + rows - 1}</text>')
    out.append(f'<text x="{left + w / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + h / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + h / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _star(cx: float, cy: float, r: float) -> str:
    pts = []
    for k in range(10):
        rad = r if k % 2 == 0 else r * 0.45
        a = -math.pi / 2 + k * math.pi / 5
        pts.append(f"{_fmt(cx + rad * math.cos(a))},{_fmt(cy + rad * math.sin(a))}")
    return " ".join(pts)


def scatter(embedding: np.ndarray, selected: np.ndarray, title: str,
            clusters: Optional[Sequence[int]] = None) -> str:
    """Client positions; clients in ``selected`` are drawn as stars."""
    emb = np.asarray(embedding, float)
    pad_x = 0.05 * (np.ptp(emb[:, 0]) or 1.0)
    pad_y = 0.05 * (np.ptp(emb[:, 1]) or 1.0)
    frame = _Frame((emb[:, 0].min() - pad_x, emb[:, 0].max() + pad_x),
                   (emb[:, 1].min() - pad_y, emb[:, 1].max() + pad_y))
    out = _header(title) + frame.axes("embedding x", "embedding y")
    chosen = set(int(i) for i in np.flatnonzero(selected))
    for i, (x, y) in enumerate(emb):
        colour = PALETTE[int(clusters[i]) % len(PALETTE)] if clusters is not None else "#555555"
        cx, cy = frame.px(x), frame.py(y)
        if i in chosen:
            out.append(f'<polygon class="selected" points="{_star(cx, cy, 8)}" fill="{colour}" stroke="black"/>')
        else:
            out.append(f'<circle class="client" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{colour}" '
                       f'fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _mean_curves(table: MetricsTable, column: str) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    series = {}
    for strategy in table.strategies:
        by_round: Dict[int, List[float]] = {}
        for row in table.select(strategy):
            v = getattr(row, column)
            if v is not None:
                by_round.setdefault(row.round, []).append(v)
        rounds = np.array(sorted(by_round))
        series[strategy] = (rounds, np.array([np.mean(by_round[r]) for r in rounds]))
    return series


def emit_plots(table: MetricsTable, kind: str, out_dir, embedding: Optional[np.ndarray] = None,
               clusters: Optional[Sequence[int]] = None, window: int = 10) -> List[Path]:
    """Write the SVG(s) for one plot kind and return their paths.

    Curves average over repeats per strategy. Heatmaps and scatters are drawn
    for repeat 0 of each strategy; the scatter stars the clients chosen in
    the final ``window`` rounds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(table) == 0:
        raise ConfigurationError("empty metrics table")
    written: List[Path] = []

    def save(name: str, svg: str):
        path = out_dir / name
        path.write_text(svg)
        written.append(path)

    if kind in ("accuracy_curves", "loss_curves", "sigma_curves"):
        column = {"accuracy_curves": "accuracy", "loss_curves": "loss", "sigma_curves": "sigma"}[kind]
        series = _mean_curves(table, column)
        if all(len(x) == 0 for x, _ in series.values()):
            raise ConfigurationError(f"table has no {column} values")
        ylabel = {"accuracy": "test accuracy", "loss": "global loss", "sigma": "sigma"}[column]
        save(f"{kind}.svg", line_chart(series, ylabel + " per round", "round", ylabel,
                                       log_y=column == "loss"))
    elif kind == "selection_heatmap":
        for strategy in table.strategies:
            raster = table.selections(strategy, _first_repeat(table, strategy))
            save(f"selection_heatmap_{_safe(strategy)}.svg",
                 heatmap(raster, f"selections: {strategy}"))
    elif kind == "embedding_scatter":
        if embedding is None:
            raise ConfigurationError("embedding_scatter needs 2-D client embeddings")
        for strategy in table.strategies:
            raster = table.selections(strategy, _first_repeat(table, strategy))
            recent = raster[-window:].any(axis=0) if len(raster) else np.zeros(len(embedding), bool)
            save(f"embedding_scatter_{_safe(strategy)}.svg",
                 scatter(embedding, recent[:len(embedding)],
                         f"{strategy}: clients selected in the last {window} rounds", clusters))
    else:
        raise ConfigurationError(f"unknown plot kind {kind!r}")
    return written


def _first_repeat(table: MetricsTable, strategy: str) -> int:
    return min(r.repeat for r in table.select(strategy))


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
