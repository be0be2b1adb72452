"""Matplotlib styling and deterministic SVG output."""

from __future__ import annotations

import io
from contextlib import contextmanager
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

FIGURE_PARAMS = {
    "font.family": "sans-serif",
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "legend.frameon": False,
    # fixed ids and no embedded text fonts keep reruns byte-identical
    "svg.hashsalt": "cmpa",
    "svg.fonttype": "none",
}

REGIME_LABELS = {"baseline": "PCConvNet", "two_step": "ContrastiveCNN", "joint": "ContrastiveCNN-JL"}
REGIME_COLORS = {"baseline": "#7f7f7f", "two_step": "#1f77b4", "joint": "#d62728"}


@contextmanager
def figure_style():
    with matplotlib.rc_context(FIGURE_PARAMS):
        yield


def new_figure(width=3.4, height=2.6):
    fig = Figure(figsize=(width, height))
    return fig, fig.add_subplot(1, 1, 1)


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path
