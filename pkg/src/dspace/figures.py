"""Matplotlib renderings written next to the delimited reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import REGIME_ORDER, BenchmarkMatrix


def save_loss_curves(loss_curve, path, title: str = "Training progress") -> None:
    """Training/validation loss versus optimizer step."""
    steps = [entry[0] for entry in loss_curve]
    train = [entry[1] for entry in loss_curve]
    val = [entry[2] for entry in loss_curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, train, marker="o", markersize=3, label="training loss")
    if any(v is not None for v in val):
        ax.plot(steps, val, marker="s", markersize=3, label="validation loss")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_benchmark_figure(matrix: BenchmarkMatrix, path) -> None:
    """Grouped accuracy bars (mean with std whiskers), one panel per train size."""
    sizes = list(dict.fromkeys(cell.train_size for cell in matrix.cells))
    models = list(dict.fromkeys(cell.model for cell in matrix.cells))
    fig, axes = plt.subplots(
        1, len(sizes), figsize=(5.5 * len(sizes), 4), squeeze=False
    )
    for col, size in enumerate(sizes):
        ax = axes[0][col]
        regimes = [r for r in REGIME_ORDER
                   if any(c.regime == r and c.train_size == size for c in matrix.cells)]
        width = 0.8 / max(len(models), 1)
        x = np.arange(len(regimes))
        for mi, model in enumerate(models):
            means, stds = [], []
            for regime in regimes:
                cell = next(
                    (c for c in matrix.cells
                     if (c.model, c.regime, c.train_size) == (model, regime, size)),
                    None,
                )
                means.append(cell.mean("accuracy") * 100 if cell else np.nan)
                stds.append(cell.std("accuracy") * 100 if cell else 0.0)
            ax.bar(x + mi * width, means, width, yerr=stds, capsize=3, label=model)
        ax.set_xticks(x + width * (len(models) - 1) / 2)
        ax.set_xticklabels(regimes)
        ax.set_ylabel("accuracy (%)")
        ax.set_ylim(0, 105)
        ax.set_title(f"train size: {size}")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
