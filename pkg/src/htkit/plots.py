"""Figure rendering for the report paths.

Every CLI report that emits delimited output also renders a figure next
to it; all plotting goes through the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["training_curves", "transfer_chart", "complexity_chart"]


def training_curves(runs: dict[str, list[dict]], path) -> Path:
    """Loss and validation accuracy per epoch, one line per labelled run."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.6))
    for label, metrics in runs.items():
        epochs = [m["epoch"] for m in metrics]
        ax_loss.plot(epochs, [m["train_loss"] for m in metrics], label=label)
        ax_acc.plot(epochs, [m["val_acc"] for m in metrics], label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_loss.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def transfer_chart(profiles, path) -> Path:
    """Per-factor gradient norms and element counts, one panel per spec."""
    n = len(profiles)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.6 * n), squeeze=False)
    for ax, profile in zip(axes[:, 0], profiles):
        names = [r["factor"] for r in profile.records]
        norms = [r["grad_norm"] for r in profile.records]
        elements = [r["elements"] for r in profile.records]
        xs = range(len(names))
        ax.bar(xs, norms, width=0.6, label="gradient norm")
        twin = ax.twinx()
        twin.plot(xs, elements, "o--", color="tab:red", label="elements")
        twin.set_ylabel("elements", color="tab:red")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=30, fontsize=7)
        ax.set_ylabel("gradient norm")
        ax.set_title(profile.label, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def complexity_chart(rows: list[dict], path) -> Path:
    """Formula storage/compute versus rank, one line per method."""
    methods = sorted({row["method"] for row in rows})
    fig, (ax_space, ax_compute) = plt.subplots(1, 2, figsize=(9, 3.6))
    for method in methods:
        series = sorted(
            (row for row in rows if row["method"] == method),
            key=lambda row: row["r"],
        )
        ranks = [row["r"] for row in series]
        ax_space.plot(ranks, [row["space_formula"] for row in series],
                      marker="o", label=method)
        ax_compute.plot(ranks, [row["compute_formula"] for row in series],
                        marker="o", label=method)
    for ax, ylabel in ((ax_space, "space formula"), (ax_compute, "compute formula")):
        ax.set_xlabel("rank")
        ax.set_ylabel(ylabel)
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
