"""Report figures (PNG, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from oto.metrics import MetricsReport, display_db  # noqa: E402


def plot_training(path, loss_history, alpha_history=(), val_history=(), title: str = "") -> None:
    """Loss curve, plus alpha and validation PSNR panels when those histories exist."""
    panels = [("training loss (MSE)", loss_history, True)]
    if alpha_history:
        panels.append(("alpha", alpha_history, False))
    if val_history:
        panels.append(("validation PSNR (dB)", val_history, False))
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 2.6 * len(panels)), sharex=True, squeeze=False)
    for ax, (label, hist, logy) in zip(axes[:, 0], panels):
        xs, ys = zip(*hist) if hist else ((), ())
        ax.plot(xs, ys, marker="." if len(xs) < 30 else None)
        ax.set_ylabel(label)
        if logy and ys and min(ys) > 0:
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("iteration")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)


def plot_reports(path, reports: Sequence[MetricsReport], baseline: Sequence[MetricsReport] | None = None) -> None:
    """Per-image PSNR / PSNR-B bars, optionally against a baseline set."""
    names = [r.name for r in reports]
    xs = range(len(reports))
    fig, ax = plt.subplots(figsize=(max(5, 0.5 * len(reports) + 2), 3.5))
    width = 0.4 if baseline is None else 0.2
    series = [("PSNR", [display_db(r.psnr) for r in reports]), ("PSNR-B", [display_db(r.psnr_b) for r in reports])]
    if baseline is not None:
        series += [
            ("PSNR (baseline)", [display_db(r.psnr) for r in baseline]),
            ("PSNR-B (baseline)", [display_db(r.psnr_b) for r in baseline]),
        ]
    for k, (label, vals) in enumerate(series):
        ax.bar([x + (k - (len(series) - 1) / 2) * width for x in xs], vals, width, label=label)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("dB")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)
