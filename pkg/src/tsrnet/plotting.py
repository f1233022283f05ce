"""Figures written next to the CSV outputs.  Uses the Agg backend only."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricReport  # noqa: E402


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_training_log(log_csv, out_png=None) -> str:
    """Mean loss per epoch (log scale) with the learning rate on a twin axis."""
    log_csv = Path(log_csv)
    with open(log_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    epochs = [int(r["epoch"]) for r in rows]
    loss = [float(r["mean_loss"]) for r in rows]
    lr = [float(r["lr"]) for r in rows]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, loss, marker="o", ms=3, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean MSE loss")
    if loss and min(loss) > 0:
        ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.step(epochs, lr, where="post", color="tab:gray", alpha=0.6)
    ax2.set_ylabel("learning rate", color="tab:gray")
    ax.grid(alpha=0.3)
    return _save(fig, out_png or log_csv.with_suffix(".png"))


def plot_metric_report(report: MetricReport, out_png, title: str = "") -> str:
    """Per-image PSNR bars; identical reconstructions (inf) are drawn at the axis top."""
    names = [s.name for s in report.per_image]
    values = [s.psnr_db for s in report.per_image]
    finite = [v for v in values if math.isfinite(v)]
    top = (max(finite) + 5.0) if finite else 60.0
    shown = [v if math.isfinite(v) else top for v in values]

    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(names) + 2), 3.5))
    ax.bar(range(len(names)), shown, color="tab:green")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("Y-PSNR (dB)")
    if finite:
        ax.set_ylim(min(finite) - 3.0, top)
    ax.set_title(title or report.summary(), fontsize=9)
    return _save(fig, out_png)


def plot_bench(rows: list[dict], out_png) -> str:
    fig, ax = plt.subplots(figsize=(4, 3))
    labels = [f"{r['height']}x{r['width']}" for r in rows]
    ax.bar(labels, [r["median_ms"] for r in rows], color="tab:orange")
    ax.set_ylabel("median forward time (ms)")
    ax.set_xlabel("LR input size")
    return _save(fig, out_png)
