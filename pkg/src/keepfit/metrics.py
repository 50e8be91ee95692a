"""Classification metrics: accuracy, one-vs-rest AUC, and average precision.

AUC uses midrank (Mann-Whitney) counting, which equals the pairwise
wins-plus-half-ties count exactly (all intermediate values are multiples of
one half, so the arithmetic is exact in float64 at this scale). Average
precision groups tied scores into a single threshold so that duplicated
scores cannot split a precision/recall point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    """Inputs that no metric value can honestly summarize."""


def _as_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise MetricsError(f"labels must be 1-D, got shape {arr.shape}")
    return arr.astype(np.int64)


def accuracy(labels, score_matrix) -> float:
    """Top-1 accuracy; argmax breaks ties toward the lowest class index."""
    y = _as_labels(labels)
    scores = np.asarray(score_matrix, dtype=np.float64)
    if scores.shape[0] != y.shape[0]:
        raise MetricsError("labels and scores disagree on the number of rows")
    if y.size == 0:
        raise MetricsError("cannot score an empty set")
    return float(np.mean(np.argmax(scores, axis=1) == y))


def binary_auc(positives: np.ndarray, scores) -> float:
    """Probability a positive outscores a negative, ties counted half.

    Computed from midranks: exactly equal to enumerating all
    positive-negative pairs and crediting 1 per win and 1/2 per tie.
    """
    pos = np.asarray(positives, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def binary_average_precision(positives: np.ndarray, scores) -> float:
    """Area under precision-recall via descending grouped thresholds."""
    pos = np.asarray(positives, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise MetricsError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    pos_sorted = pos[order]
    ap = 0.0
    tp = 0
    seen = 0
    recall_prev = 0.0
    i = 0
    while i < len(s_sorted):
        j = i
        while j + 1 < len(s_sorted) and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        tp += int(pos_sorted[i : j + 1].sum())
        seen = j + 1
        precision = tp / seen
        recall = tp / n_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return ap


def _ovr_macro(labels, score_matrix, per_class_fn, metric_name: str) -> float:
    y = _as_labels(labels)
    scores = np.asarray(score_matrix, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != y.shape[0]:
        raise MetricsError("score matrix must be n_samples x n_classes")
    values = []
    skipped = []
    for c in range(scores.shape[1]):
        positives = y == c
        try:
            values.append(per_class_fn(positives, scores[:, c]))
        except MetricsError:
            skipped.append(c)
    if skipped:
        warnings.warn(
            f"{metric_name}: classes {skipped} absent from labels; "
            f"macro average covers {len(values)} of {scores.shape[1]} classes",
            stacklevel=3,
        )
    if not values:
        raise MetricsError(f"{metric_name}: no class had enough labels to score")
    return float(np.mean(values))


def macro_ovr_auc(labels, score_matrix) -> float:
    return _ovr_macro(labels, score_matrix, binary_auc, "macro OvR AUC")


def macro_aupr(labels, score_matrix) -> float:
    return _ovr_macro(labels, score_matrix, binary_average_precision, "macro AUPR")


@dataclass
class MetricReport:
    acc: float
    auc: float
    aupr: float
    n_samples: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"acc": self.acc, "auc": self.auc, "aupr": self.aupr,
                "n_samples": self.n_samples, **self.extra}


def classification_metrics(labels, score_matrix) -> MetricReport:
    y = _as_labels(labels)
    return MetricReport(
        acc=accuracy(y, score_matrix),
        auc=macro_ovr_auc(y, score_matrix),
        aupr=macro_aupr(y, score_matrix),
        n_samples=int(y.shape[0]),
    )
