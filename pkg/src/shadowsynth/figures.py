"""Matplotlib figures rendered next to the delimited/JSON outputs:
loss curves from a training log and metric bars from an eval report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .losses import LossReport
from .metrics import METRIC_NAMES, REGIONS, EvalReport


def read_loss_log(jsonl_path: str | Path) -> list[LossReport]:
    reports = []
    with open(jsonl_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                reports.append(LossReport.from_json(line))
    return reports


def plot_loss_curves(jsonl_path: str | Path, out_png: str | Path) -> Path:
    """Render every logged loss entry over training steps."""
    reports = read_loss_log(jsonl_path)
    if not reports:
        raise ValueError(f"empty loss log: {jsonl_path}")
    keys = list(reports[0].entries)
    steps = np.arange(1, len(reports) + 1)
    fig, ax = plt.subplots(figsize=(8, 5))
    for key in keys:
        values = [r[key] for r in reports]
        if not any(values):
            continue
        ax.plot(steps, values, label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def plot_metric_bars(report: EvalReport, out_png: str | Path) -> Path:
    """One panel per metric, one bar per region."""
    fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(3 * len(METRIC_NAMES), 3.2))
    x = np.arange(len(REGIONS))
    for ax, metric in zip(axes, METRIC_NAMES):
        values = [report.regions[r][metric] for r in REGIONS]
        ax.bar(x, values, color="#4878d0")
        ax.set_xticks(x, REGIONS, rotation=20)
        ax.set_title(metric)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
