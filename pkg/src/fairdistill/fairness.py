"""Equalized-odds violation metrics (DEO_M, DEO_A)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass
class DeoReport:
    """Per-(group, class) accuracies and the derived fairness summary.

    ``acc_matrix`` is |A|×M with NaN marking cells that had no samples;
    ``support`` holds the sample counts.
    """

    acc_matrix: np.ndarray
    support: np.ndarray
    gaps: np.ndarray
    deo_a: float
    deo_m: float
    overall_acc: float

    def to_record(self, prefix: str = "") -> dict:
        """Flat key/value view; accuracies of absent cells become None."""
        rec = {
            f"{prefix}overall_acc": self.overall_acc,
            f"{prefix}deo_a": self.deo_a,
            f"{prefix}deo_m": self.deo_m,
        }
        n_groups, n_classes = self.acc_matrix.shape
        for a in range(n_groups):
            for y in range(n_classes):
                v = self.acc_matrix[a, y]
                rec[f"{prefix}acc_a{a}_y{y}"] = None if np.isnan(v) else float(v)
                rec[f"{prefix}support_a{a}_y{y}"] = int(self.support[a, y])
        return rec


def group_class_accuracy(preds, labels, groups, n_classes: int, n_groups: int):
    """Return ``(acc_matrix, support)`` with ``acc[a, y] = Pr(pred = y | a, y)``."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes
                        or groups.min() < 0 or groups.max() >= n_groups):
        raise DomainError("label or group index out of range")
    support = np.zeros((n_groups, n_classes), dtype=np.int64)
    correct = np.zeros((n_groups, n_classes), dtype=np.int64)
    np.add.at(support, (groups, labels), 1)
    np.add.at(correct, (groups, labels), (preds == labels).astype(np.int64))
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(support > 0, correct / np.maximum(support, 1), np.nan)
    return acc, support


def deo_metrics(acc_matrix, support) -> DeoReport:
    """Worst-case and class-averaged between-group accuracy gaps."""
    acc = np.asarray(acc_matrix, dtype=float)
    support = np.asarray(support)
    present = support > 0
    if not present.any():
        raise DomainError("every (group, class) cell is empty")
    n_classes = acc.shape[1]
    gaps = np.zeros(n_classes)
    for y in range(n_classes):
        col = acc[present[:, y], y]
        if col.size >= 2:
            gaps[y] = col.max() - col.min()
    overall = float((np.where(present, acc, 0.0) * support).sum() / support.sum())
    return DeoReport(
        acc_matrix=acc,
        support=support,
        gaps=gaps,
        deo_a=math.fsum(gaps.tolist()) / n_classes,
        deo_m=float(gaps.max()),
        overall_acc=overall,
    )


def deo_report(preds, labels, groups, n_classes: int, n_groups: int) -> DeoReport:
    acc, support = group_class_accuracy(preds, labels, groups, n_classes, n_groups)
    return deo_metrics(acc, support)
