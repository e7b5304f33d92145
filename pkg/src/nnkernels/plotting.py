"""Deterministic SVG figures from the CSV outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import read_results_csv  # noqa: E402

_STYLE = {"svg.hashsalt": "nnkernels", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0),
          "figure.dpi": 100, "axes.grid": True}
_LOG_METRICS = {"l2_error", "cross_entropy"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_results(results_csv, svg_path, metric, stage="test", kind="line"):
    """Line: median over seeds against epoch, per method.  Scatter: last-epoch value per seed."""
    rows = [r for r in read_results_csv(results_csv) if r["metric"] == metric and r["stage"] == stage]
    if not rows:
        raise ValueError(f"no {stage} rows for metric {metric!r} in {results_csv}")
    methods = sorted({r["method"] for r in rows})
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for m in methods:
            mine = [r for r in rows if r["method"] == m]
            if kind == "line":
                epochs = sorted({r["epoch"] for r in mine})
                med = [np.median([r["value"] for r in mine if r["epoch"] == e]) for e in epochs]
                ax.plot(epochs, med, marker="o", ms=3, label=m)
                ax.set_xlabel("epoch")
            elif kind == "scatter":
                last = {}
                for r in mine:
                    if r["epoch"] >= last.get(r["seed"], (-1, 0))[0]:
                        last[r["seed"]] = (r["epoch"], r["value"])
                seeds = sorted(last)
                ax.scatter(seeds, [last[s][1] for s in seeds], s=12, label=m)
                ax.set_xlabel("seed")
            else:
                raise ValueError("kind must be 'line' or 'scatter'")
        if metric in _LOG_METRICS and all(r["value"] > 0 for r in rows):
            ax.set_yscale("log")
        ax.set_ylabel(f"{stage} {metric}")
        ax.legend()
        _save(fig, svg_path)
    return Path(svg_path)


def plot_columns(csv_path, svg_path, x, ys, kind="line"):
    """Plot columns ``ys`` against column ``x`` of any headed CSV (comment lines skipped)."""
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        data = list(reader)
    if not data:
        raise ValueError(f"{csv_path} has no rows")
    for col in [x, *ys]:
        if col not in data[0]:
            raise ValueError(f"column {col!r} not in {csv_path}")
    xv = np.array([float(r[x]) for r in data])
    order = np.argsort(xv, kind="stable")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for col in ys:
            yv = np.array([float(r[col]) for r in data])
            if kind == "line":
                ax.plot(xv[order], yv[order], label=col)
            elif kind == "scatter":
                ax.scatter(xv, yv, s=8, label=col)
            else:
                raise ValueError("kind must be 'line' or 'scatter'")
        ax.set_xlabel(x)
        ax.legend()
        _save(fig, svg_path)
    return Path(svg_path)
