"""Binary classification metrics.

AUC is the exact pairwise statistic (ties count 0.5), computed via
average ranks; it matches a brute-force loop over every
positive/negative pair, which the tests verify.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

THRESHOLD = 0.5


@dataclass
class MetricsReport:
    accuracy: float
    auc: float | None          # None when only one class is present
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_samples: int

    @property
    def auc_defined(self) -> bool:
        return self.auc is not None

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "auc": self.auc, "f1": self.f1,
                "precision": self.precision, "recall": self.recall,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "n_samples": self.n_samples}

    def row(self) -> list:
        fmt = lambda v: "" if v is None else f"{v:.4f}"
        return [fmt(self.accuracy), fmt(self.auc), fmt(self.f1),
                fmt(self.precision), fmt(self.recall)]

    def save_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def auc_score(probs: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-based Mann-Whitney AUC; exact match with pairwise comparison."""
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(probs, kind="mergesort")
    ranks = np.empty(len(probs), dtype=np.float64)
    sorted_p = probs[order]
    i = 0
    rank = 1
    while i < len(sorted_p):
        j = i
        while j + 1 < len(sorted_p) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = (rank + rank + (j - i)) / 2.0
        rank += j - i + 1
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(probs, labels) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError(f"probs shape {probs.shape} != labels "
                         f"{labels.shape}")
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    pred = (probs >= THRESHOLD).astype(int)
    tp = int(((pred == 1) & (labels == 1)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    n = len(labels)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0
    return MetricsReport(
        accuracy=(tp + tn) / n, auc=auc_score(probs, labels), f1=f1,
        precision=precision, recall=recall, tp=tp, fp=fp, tn=tn, fn=fn,
        n_samples=n)
