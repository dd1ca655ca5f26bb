"""Accuracy-versus-training-time figures (mean with a one-std band per series)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_accuracy_vs_time(epochs: Sequence, path, budget: float = math.inf, title: str | None = None) -> Path:
    """One line per (regime, arch, shift) from epoch summaries; returns the written path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series: dict[tuple, list] = {}
    for s in epochs:
        series.setdefault((s.regime, s.arch, s.shift), []).append(s)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for (regime, arch, shift), rows in sorted(series.items()):
        rows = sorted(rows, key=lambda r: r.epoch)
        t = np.array([r.mean_wall_time_s for r in rows])
        m = np.array([r.mean_test_accuracy for r in rows]) * 100
        sd = np.array([r.std_test_accuracy for r in rows]) * 100
        line, = ax.plot(t, m, marker="o", markersize=3, label=f"{regime} {arch} {shift}")
        ax.fill_between(t, m - sd, m + sd, color=line.get_color(), alpha=0.2, linewidth=0)
    if math.isfinite(budget):
        ax.axvline(budget, color="grey", linestyle="--", linewidth=1, label=f"budget {budget:g} s")
    ax.set_xlabel("training wall time (s)")
    ax.set_ylabel("test accuracy (%)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_timing(rows: Sequence, path) -> Path:
    """Bar chart of measured PC/BP per-epoch time ratios next to the reference values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.bar(x - 0.2, [r.ratio for r in rows], width=0.4, label="measured")
    ax.bar(x + 0.2, [r.reference_ratio for r in rows], width=0.4, label="reference")
    ax.axhline(1.0, color="grey", linewidth=1)
    ax.set_xticks(x, [r.arch for r in rows])
    ax.set_ylabel("PC / BP time per epoch")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
