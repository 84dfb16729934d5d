"""Detection and classification metrics.

AUROC uses the midrank convention for ties; AUPR integrates the
precision-recall curve stepwise over distinct thresholds (no interpolation,
the conservative convention).  Degenerate denominators yield 0 with a
warning rather than NaN.
"""

import warnings
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


def _check_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0 or not (np.any(labels == 1) and np.any(labels == 0)):
        raise MetricError("metric needs both classes present")
    return labels


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the rank statistic."""
    labels = _check_binary(labels)
    scores = np.asarray(scores, dtype=np.float64)
    ranks = _midranks(scores)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Area under precision-recall by stepwise summation over thresholds."""
    labels = _check_binary(labels)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # keep only the last entry of each tied-score run
    distinct = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tp, fp = tp[distinct], fp[distinct]
    n_pos = int((labels == 1).sum())
    precision = tp / (tp + fp)
    recall = tp / n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def f1(preds, labels) -> float:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    if 2 * tp + fp + fn == 0:
        warnings.warn("F1 undefined (no positives anywhere); defining as 0", stacklevel=2)
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def sensitivity_specificity(preds, labels):
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    if tp + fn == 0:
        warnings.warn("sensitivity undefined (no positives); defining as 0", stacklevel=2)
        sens = 0.0
    else:
        sens = tp / (tp + fn)
    if tn + fp == 0:
        warnings.warn("specificity undefined (no negatives); defining as 0", stacklevel=2)
        spec = 0.0
    else:
        spec = tn / (tn + fp)
    return float(sens), float(spec)


def weighted_f1(preds, labels, n_classes: int) -> float:
    """Support-weighted mean of per-class one-vs-rest F1 scores."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise MetricError("labels out of range")
    total = labels.size
    score = 0.0
    for c in range(n_classes):
        support = int(np.sum(labels == c))
        if support == 0:
            continue
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = support - tp
        f1_c = 0.0 if 2 * tp + fp + fn == 0 else 2.0 * tp / (2 * tp + fp + fn)
        score += (support / total) * f1_c
    return float(score)


@dataclass
class ConfusionMatrix:
    """Integer counts (rows: true class, columns: predicted class)."""

    counts: np.ndarray

    def normalized(self) -> np.ndarray:
        """Rows divided by class support; zero-support rows stay zero."""
        support = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        nonzero = support[:, 0] > 0
        out[nonzero] = self.counts[nonzero] / support[nonzero]
        return out

    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.normalized())


def confusion(preds, labels, n_classes: int) -> ConfusionMatrix:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise MetricError("labels out of range")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts)
