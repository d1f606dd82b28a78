"""Matplotlib figures for metric reports.

All functions draw onto a fresh figure, save it to ``path`` and close it.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import LEVELS, SUB_METRICS, MetricReport  # noqa: E402

SUB_METRIC_LABELS = {
    "first_drop": r"$\mathcal{F}$",
    "range": r"$\mathcal{R}$",
    "error_rate": r"$\rho$",
    "average_error": r"$\mu$",
    "adce": r"$\Delta$",
}


def report_style(width=8.0, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    plt.rcParams.update({
        "font.size": 9,
        "axes.titlesize": 10,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "savefig.dpi": 150,
        "svg.hashsalt": "vqarobust",
    })
    return width, height or width * golden


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def relative_drop_heatmap(report: MetricReport, path) -> None:
    w, h = report_style(9.0, 0.6 * len(report.models) + 1.8)
    fig, ax = plt.subplots(figsize=(w, h))
    data = 100.0 * report.pair_rel_drop
    im = ax.imshow(data, cmap="Reds", aspect="auto")
    ax.set_xticks(range(len(report.corruptions)), report.corruptions, rotation=45, ha="right")
    ax.set_yticks(range(len(report.models)), report.models)
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            ax.text(j, i, f"{data[i, j]:.1f}", ha="center", va="center", fontsize=7)
    fig.colorbar(im, ax=ax, label="relative accuracy drop (%)")
    _save(fig, path)


def average_error_bars(report: MetricReport, path) -> None:
    w, h = report_style(10.0, 4.0)
    fig, ax = plt.subplots(figsize=(w, h))
    mu = report.sub.raw["average_error"]
    n = len(report.models)
    width = 0.8 / max(n, 1)
    x = np.arange(len(report.corruptions))
    for i, m in enumerate(report.models):
        ax.bar(x + (i - (n - 1) / 2) * width, np.ma.filled(mu[i], np.nan), width, label=m)
    ax.set_xticks(x, report.corruptions, rotation=45, ha="right")
    ax.set_ylabel("average error")
    ax.legend(ncol=n)
    _save(fig, path)


def error_trends(grid, path) -> None:
    ncols = min(4, len(grid.corruptions))
    nrows = math.ceil(len(grid.corruptions) / ncols)
    w, _ = report_style(2.6 * ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(w, 2.2 * nrows), squeeze=False, sharey=True)
    err = grid.error
    for k, c in enumerate(grid.corruptions):
        ax = axes[k // ncols][k % ncols]
        for i, m in enumerate(grid.models):
            ax.plot(LEVELS, err[i, k], marker="o", markersize=3, label=m)
        ax.set_title(c)
        ax.set_xticks(LEVELS)
    for k in range(len(grid.corruptions), nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    axes[0][0].set_ylabel("error")
    axes[0][0].legend()
    _save(fig, path)


def composition_radar(report: MetricReport, path) -> None:
    """Scaled sub-metric composition per model."""
    angles = np.linspace(0, 2 * np.pi, len(SUB_METRICS), endpoint=False).tolist()
    w, _ = report_style(5.0)
    fig = plt.figure(figsize=(w, w))
    ax = fig.add_subplot(projection="polar")
    for m_idx, m in enumerate(report.models):
        vals = [report.model_scaled[name][m_idx] for name in SUB_METRICS]
        ax.plot(angles + angles[:1], vals + vals[:1], label=m)
        ax.fill(angles + angles[:1], vals + vals[:1], alpha=0.1)
    ax.set_xticks(angles, [SUB_METRIC_LABELS[n] for n in SUB_METRICS])
    ax.set_ylim(0, 1)
    ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.1))
    _save(fig, path)
