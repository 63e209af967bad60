"""SVG figures rendered from the same arrays the CSV files hold."""

import logging
import os
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from isotorus.utils import ensure_dir

logger = logging.getLogger(__name__)

Series = Dict[str, Tuple[Sequence[float], Sequence[float]]]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: str) -> str:
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    fig.savefig(path, format="svg", bbox_inches="tight")
    _pyplot().close(fig)
    logger.info(f"Figure written to {path}")
    return path


def line_plot(
    path: str,
    series: Series,
    xlabel: str = "j",
    ylabel: str = "",
    title: Optional[str] = None,
    xscale: str = "linear",
    yscale: str = "linear",
    marker: str = "",
) -> str:
    """One line per label; non-positive values are dropped on log axes."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if xscale == "log":
            keep &= x > 0
        if yscale == "log":
            keep &= y > 0
        ax.plot(x[keep], y[keep], marker=marker, linewidth=0.8, markersize=2, label=label)
    ax.set_xscale(xscale)
    ax.set_yscale(yscale)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize="small")
    return _save(fig, path)


def stem_plot(path: str, x, y, xlabel: str = "omega_k", ylabel: str = "|C_k|", title: Optional[str] = None) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    ax.vlines(x[keep], np.min(y[keep]) if keep.any() else 1.0, y[keep], linewidth=0.8)
    ax.plot(x[keep], y[keep], "o", markersize=2)
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def scatter_fit_plot(path: str, x, y, slope: float, xlabel: str, ylabel: str, title: Optional[str] = None) -> str:
    """Scatter of (x, y) with the line y = slope x."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 5))
    x = np.asarray(x, dtype=float)
    ax.plot(x, np.asarray(y, dtype=float), "o", markersize=4)
    grid = np.linspace(0.0, x.max() if x.size else 1.0, 50)
    ax.plot(grid, slope * grid, linewidth=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)
