"""Figure rendering for training runs and evaluation reports.

Everything draws through the Agg backend and writes straight to files,
so it works headless and produces the same pixels on every run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import MetricReport  # noqa: E402
from .training import TrainLog  # noqa: E402

_DPI = 120


def render_training_curves(log: TrainLog, path: str | Path) -> None:
    """Loss components and learning rate over steps, stacked panels.

    Adds a third panel with validation PSNR when the log holds any.
    """
    if not log.rows:
        raise ValueError("training log is empty, nothing to plot")
    steps = [r[0] for r in log.rows]
    val_rows = log.val_rows
    panels = 3 if val_rows else 2
    fig, axes = plt.subplots(panels, 1, figsize=(8, 2.6 * panels), sharex=True)
    ax = axes[0]
    for idx, label in ((5, "total"), (2, "fidelity"), (3, "edge"), (4, "recon")):
        ax.plot(steps, [r[idx] for r in log.rows], label=label, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)

    axes[1].plot(steps, [r[1] for r in log.rows], color="tab:green", linewidth=1.0)
    axes[1].set_ylabel("learning rate")
    axes[1].set_yscale("log")
    axes[1].grid(True, alpha=0.3)

    if val_rows:
        axes[2].plot([v[0] for v in val_rows], [v[1] for v in val_rows],
                     marker="o", markersize=3, color="tab:purple", linewidth=1.0)
        axes[2].set_ylabel("val PSNR (dB)")
        axes[2].grid(True, alpha=0.3)
    axes[-1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_metric_chart(reports: list[MetricReport], path: str | Path) -> None:
    """Per-image PSNR bars with SSIM markers on a twin axis.

    A MEAN row, if present, is drawn as a horizontal reference line
    rather than a bar.
    """
    rows = [r for r in reports if r.name != "MEAN"]
    mean = next((r for r in reports if r.name == "MEAN"), None)
    if not rows:
        raise ValueError("no per-image rows to plot")
    names = [r.name for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(rows) + 2.0), 4.2))
    ax.bar(x, [r.psnr_db for r in rows], color="tab:blue", alpha=0.75, label="PSNR")
    if mean is not None:
        ax.axhline(mean.psnr_db, color="tab:blue", linestyle="--", linewidth=1.0,
                   label=f"mean {mean.psnr_db:.2f} dB")
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    twin = ax.twinx()
    twin.plot(list(x), [r.ssim for r in rows], color="tab:red", marker="o",
              markersize=4, linewidth=1.0, label="SSIM")
    twin.set_ylabel("SSIM")
    twin.set_ylim(0.0, 1.05)
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = twin.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
