"""Figures for sweeps and method comparisons (rendered to files, headless)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed metadata keeps repeated renders byte-identical.
_SAVE_KW = {"metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "png"
    kw = dict(_SAVE_KW)
    if fmt == "pdf":
        kw["metadata"] = {"Creator": None, "Producer": None, "CreationDate": None}
    elif fmt == "svg":
        kw["metadata"] = {"Date": None}
    fig.savefig(path, format=fmt, dpi=120, bbox_inches="tight", **kw)
    plt.close(fig)
    return path


def plot_skew_sweep(records: Sequence[dict], path) -> Path:
    """DEO_M and accuracy against teacher skew, seed mean with ±1 std bars.

    ``records`` are sweep rows with keys ``skew``, ``model``, ``acc``, ``deo_m``.
    """
    grouped = defaultdict(lambda: defaultdict(list))
    for r in records:
        grouped[r["model"]][float(r["skew"])].append((float(r["acc"]), float(r["deo_m"])))

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for model, style in (("teacher", "o-"), ("student", "s--")):
        if model not in grouped:
            continue
        skews = sorted(grouped[model])
        vals = [np.array(grouped[model][s]) for s in skews]
        for ax, col in zip(axes, (1, 0)):
            mean = [100 * v[:, col].mean() for v in vals]
            std = [100 * v[:, col].std(ddof=1) if len(v) > 1 else 0.0 for v in vals]
            ax.errorbar(skews, mean, yerr=std, fmt=style, capsize=3, label=model)
    axes[0].set_ylabel("DEO_M (%)")
    axes[1].set_ylabel("accuracy (%)")
    for ax in axes:
        ax.set_xlabel("teacher training skew ρ")
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_method_bars(rows, path) -> Path:
    """Grouped bars of accuracy, DEO_A and DEO_M per method (``ResultRow`` list)."""
    metrics = (("acc", "accuracy"), ("deo_a", "DEO_A"), ("deo_m", "DEO_M"))
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    labels = [r.method for r in rows]
    x = np.arange(len(rows))
    for ax, (key, title) in zip(axes, metrics):
        means = [r.mean(key) for r in rows]
        stds = [r.std(key) for r in rows]
        colors = ["0.55" if r.method.lower() == "teacher" else "C0" for r in rows]
        ax.bar(x, means, yerr=stds, color=colors, capsize=3)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=35, ha="right")
        ax.set_title(f"{title} (%)")
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history, path) -> Path:
    """Training curves from a ``TrainHistory``."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    ep = history.column("epoch")
    axes[0].plot(ep, history.column("train_loss"), label="train loss")
    axes[0].plot(ep, history.column("test_loss"), label="test CE")
    axes[0].set_xlabel("epoch")
    axes[0].legend()
    axes[1].plot(ep, 100 * history.column("test_acc"), label="accuracy")
    axes[1].plot(ep, 100 * history.column("deo_m"), label="DEO_M")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("%")
    axes[1].legend()
    fig.tight_layout()
    return _save(fig, path)
