"""Figures written next to the delimited reports (PNG, non-interactive backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .evaluation import METRICS, MetricReport  # noqa: E402

TITLES = {
    "radius": "Radius of gyration",
    "dailyloc": "Daily locations",
    "distance": "Jump distance",
    "grank": "G-rank",
    "irank": "I-rank",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_metric_report(report: MetricReport, path) -> Path:
    """One panel per metric: real versus synthetic mass per bin, JSD in the title."""
    names = [m for m in METRICS if m in report.jsd]
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.0))
    axes = np.atleast_1d(axes)
    for ax, m in zip(axes, names):
        real, syn = report.real[m], report.synthetic[m]
        x = np.arange(len(real.mass))
        ax.step(x, real.mass, where="mid", label="real", color="k")
        ax.step(x, syn.mass, where="mid", label="synthetic", color="tab:red", alpha=0.8)
        ax.set_title(f"{TITLES[m]}\nJSD {report.jsd[m]:.4f}", fontsize=9)
        ax.set_xlabel("bin")
        if m in ("grank", "irank"):
            ax.set_xlim(-0.5, min(len(x), 20) - 0.5)
    axes[0].set_ylabel("mass")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_history(history: Sequence[dict], path) -> Path:
    """Mean released reward and discriminator loss per round."""
    rounds = [h["round"] for h in history]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    a.plot(rounds, [h["mean_reward"] for h in history], label="mean R")
    a.plot(rounds, [h["mean_compensated"] for h in history], label="mean compensated R")
    a.set_xlabel("round")
    a.set_ylabel("reward")
    a.legend(fontsize=8)
    b.plot(rounds, [h["disc_loss"] for h in history], color="tab:green")
    b.set_xlabel("round")
    b.set_ylabel("discriminator loss")
    return _save(fig, path)


def plot_sweep(rows: Sequence, path) -> Path:
    """Final JSD per metric and membership-inference accuracy against epsilon (seed means)."""
    eps = sorted({r.epsilon for r in rows}, key=lambda e: -e if math.isfinite(e) else -math.inf)
    labels = ["inf" if math.isinf(e) else f"{e:g}" for e in eps]
    x = np.arange(len(eps))
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    for m in METRICS:
        means = [np.mean([r.jsd[m] for r in rows if r.epsilon == e]) for e in eps]
        a.plot(x, means, marker="o", label=TITLES[m])
    a.set_xticks(x, labels)
    a.set_xlabel("epsilon")
    a.set_ylabel("JSD")
    a.legend(fontsize=7)
    mia = [np.nanmean([r.mia_accuracy for r in rows if r.epsilon == e]) for e in eps]
    uniq = [np.nanmean([r.uniqueness for r in rows if r.epsilon == e]) for e in eps]
    b.plot(x, mia, marker="o", label="MIA accuracy")
    b.plot(x, uniq, marker="s", label="uniqueness")
    b.axhline(0.5, color="grey", lw=0.8, ls="--")
    b.set_xticks(x, labels)
    b.set_xlabel("epsilon")
    b.legend(fontsize=8)
    return _save(fig, path)


def plot_attack(report, path) -> Path:
    """Fold accuracies of the membership attack and the distribution of best-match overlap."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    folds = report.mia.fold_accuracies
    a.bar(np.arange(1, len(folds) + 1), folds, color="tab:blue")
    a.axhline(0.5, color="grey", lw=0.8, ls="--")
    a.set_ylim(0, 1)
    a.set_xlabel("fold")
    a.set_ylabel("accuracy")
    b.hist(report.uniqueness.rates, bins=20, range=(0, 1), color="tab:orange")
    b.set_xlabel("best-match overlap rate")
    b.set_ylabel("real trajectories")
    return _save(fig, path)
