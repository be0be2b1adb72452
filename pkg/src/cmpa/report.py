"""Figure analogues of the result plots, each written as SVG plus a TSV of
the exact plotted numbers.

Layout per criterion::

    reports/<criterion>/r2_box.{svg,tsv}
    reports/<criterion>/db_bar.{svg,tsv}
    reports/<criterion>/<regime>_scatter.{svg,tsv}
    reports/<criterion>/<regime>_centroid.{svg,tsv}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import read_projection
from .plotting import REGIME_COLORS, REGIME_LABELS, new_figure, figure_style, save_svg


class ReportError(ValueError):
    pass


def boxplot_stats(values):
    """``(min, q1, median, q3, max)`` with linearly interpolated quartiles."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ReportError("boxplot_stats needs at least one value")
    q = np.percentile(values, [0, 25, 50, 75, 100], method="linear")
    return tuple(float(v) for v in q)


@dataclass
class Cell:
    regime: str
    criterion: str
    seed: int
    r2: float | None
    davies_bouldin: float | None
    embeddings_path: str | None = None
    projection_path: str | None = None
    centroid_bins: list = field(default_factory=list)
    centroid_distances: list = field(default_factory=list)

    @property
    def key(self):
        return (self.regime, self.criterion, self.seed)


@dataclass
class ExperimentMatrix:
    regimes: list
    criteria: list
    seeds: list
    cells: dict = field(default_factory=dict)
    # relative paths in cells resolve against this directory
    root: str = "."

    def add(self, cell: Cell):
        if cell.key in self.cells:
            raise ReportError(f"duplicate cell {cell.key}")
        self.cells[cell.key] = cell

    def missing(self):
        return [(r, c, s) for r in self.regimes for c in self.criteria for s in self.seeds
                if (r, c, s) not in self.cells]

    def check_complete(self):
        missing = self.missing()
        if missing:
            listed = ", ".join(f"(regime={r}, criterion={c}, seed={s})" for r, c, s in missing)
            raise ReportError(f"experiment matrix is incomplete; missing {listed}")

    def resolve(self, rel):
        return Path(self.root) / rel

    def to_json(self):
        doc = {
            "regimes": list(self.regimes),
            "criteria": list(self.criteria),
            "seeds": list(self.seeds),
            "cells": [asdict(self.cells[k]) for k in sorted(self.cells)],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        tmp.replace(path)
        return path

    @classmethod
    def read(cls, path):
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        matrix = cls(doc["regimes"], doc["criteria"], doc["seeds"], root=str(path.parent))
        for raw in doc["cells"]:
            matrix.add(Cell(**raw))
        return matrix


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return repr(float(v))


def _write_tsv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "\n".join(["\t".join(header)] + ["\t".join(str(x) for x in row) for row in rows]) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def _finite(values):
    return [v for v in values if v is not None and not math.isnan(v)]


def _r2_box(matrix, criterion, out):
    header = ["regime", "min", "q1", "median", "q3", "max", "values"]
    rows, stats = [], []
    for regime in matrix.regimes:
        values = _finite([matrix.cells[(regime, criterion, s)].r2 for s in matrix.seeds])
        if values:
            s = boxplot_stats(values)
            stats.append({"label": REGIME_LABELS.get(regime, regime), "whislo": s[0], "q1": s[1],
                          "med": s[2], "q3": s[3], "whishi": s[4], "fliers": []})
            rows.append([regime] + [_fmt(v) for v in s] + [",".join(_fmt(v) for v in values)])
        else:
            rows.append([regime] + ["nan"] * 5 + [""])
    fig, ax = new_figure()
    if stats:
        ax.bxp(stats, showfliers=False)
    ax.set_ylabel("test $R^2$")
    ax.set_title(criterion.replace("_", " "))
    return [_write_tsv(out / "r2_box.tsv", header, rows), save_svg(fig, out / "r2_box.svg")]


def _db_bar(matrix, criterion, out):
    header = ["regime", "mean"] + [f"seed{s}" for s in matrix.seeds]
    rows, means = [], []
    fig, ax = new_figure()
    for x, regime in enumerate(matrix.regimes):
        per_seed = [matrix.cells[(regime, criterion, s)].davies_bouldin for s in matrix.seeds]
        finite = _finite(per_seed)
        mean = float(np.mean(finite)) if finite else float("nan")
        means.append(mean)
        rows.append([regime, _fmt(mean)] + [_fmt(v) for v in per_seed])
        ax.bar(x, 0.0 if math.isnan(mean) else mean, color=REGIME_COLORS.get(regime, "#444444"), width=0.6)
        ax.plot([x] * len(finite), finite, "k.", markersize=3)
    ax.set_xticks(range(len(matrix.regimes)), [REGIME_LABELS.get(r, r) for r in matrix.regimes])
    ax.set_ylabel("Davies-Bouldin index")
    ax.set_title(criterion.replace("_", " "))
    return [_write_tsv(out / "db_bar.tsv", header, rows), save_svg(fig, out / "db_bar.svg")]


def _scatter(matrix, cell, out):
    points, bins = np.zeros((0, 2)), np.zeros(0, dtype=int)
    if cell.projection_path:
        points, bins = read_projection(matrix.resolve(cell.projection_path))
    rows = [[_fmt(x), _fmt(y), int(b)] for (x, y), b in zip(points, bins)]
    fig, ax = new_figure(3.0, 3.0)
    if len(points):
        sc = ax.scatter(points[:, 0], points[:, 1], c=bins, cmap="viridis", s=8,
                        vmin=0, vmax=max(1, int(bins.max())))
        fig.colorbar(sc, ax=ax, label="rating bin")
    ax.set_title(f"{REGIME_LABELS.get(cell.regime, cell.regime)} (seed {cell.seed})")
    ax.set_xticks([])
    ax.set_yticks([])
    stem = out / f"{cell.regime}_scatter"
    return [_write_tsv(stem.with_suffix(".tsv"), ["x", "y", "bin"], rows), save_svg(fig, stem.with_suffix(".svg"))]


def _centroid(cell, out):
    bins = [int(b) for b in cell.centroid_bins]
    dist = np.asarray(cell.centroid_distances, dtype=np.float64).reshape(len(bins), len(bins))
    rows = [[b] + [_fmt(v) for v in row] for b, row in zip(bins, dist)]
    fig, ax = new_figure(3.0, 2.6)
    if bins:
        im = ax.imshow(dist, cmap="magma")
        ax.set_xticks(range(len(bins)), bins)
        ax.set_yticks(range(len(bins)), bins)
        fig.colorbar(im, ax=ax, label="centroid distance")
    ax.set_xlabel("rating bin")
    ax.set_ylabel("rating bin")
    ax.set_title(REGIME_LABELS.get(cell.regime, cell.regime))
    stem = out / f"{cell.regime}_centroid"
    header = ["bin"] + [str(b) for b in bins]
    return [_write_tsv(stem.with_suffix(".tsv"), header, rows), save_svg(fig, stem.with_suffix(".svg"))]


def render_reports(matrix: ExperimentMatrix, out_dir) -> list:
    """Write every figure and its data table; returns the written paths.

    Scatter and centroid figures show the lowest seed of each regime.
    """
    matrix.check_complete()
    out_dir = Path(out_dir)
    written = []
    first_seed = min(matrix.seeds)
    with figure_style():
        for criterion in matrix.criteria:
            out = out_dir / criterion
            written += _r2_box(matrix, criterion, out)
            written += _db_bar(matrix, criterion, out)
            for regime in matrix.regimes:
                cell = matrix.cells[(regime, criterion, first_seed)]
                written += _scatter(matrix, cell, out)
                written += _centroid(cell, out)
    return written
