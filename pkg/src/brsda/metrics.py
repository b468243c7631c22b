"""AUC and accuracy, computed directly from ranks and argmax."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, UndefinedMetricError


def _as_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2 and labels.shape[1] == 1:
        labels = labels[:, 0]
    return labels.astype(np.int64)


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted as 1/2.

    Uses midranks, so the result equals the exhaustive pairwise count exactly.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_labels(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def check_predictions(scores, labels, num_classes: int | None = None, atol: float = 1e-5):
    """Validate an ``N x c`` probability matrix and its labels; return numpy copies."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_labels(labels)
    if scores.ndim != 2 or len(scores) == 0:
        raise DataError(f"scores must be a non-empty N x c matrix, got shape {scores.shape}")
    if labels.shape != (len(scores),):
        raise DataError(f"labels must have shape ({len(scores)},), got {labels.shape}")
    c = scores.shape[1] if num_classes is None else num_classes
    if scores.shape[1] != c:
        raise DataError(f"scores have {scores.shape[1]} columns, expected {c}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"labels outside [0, {c})")
    if not np.allclose(scores.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise DataError("score rows do not sum to 1")
    return scores, labels


def per_class_auc(scores, labels) -> dict[int, float]:
    """One-vs-rest AUC for every class that has both positives and negatives."""
    scores, labels = check_predictions(scores, labels)
    out = {}
    for c in range(scores.shape[1]):
        target = (labels == c).astype(np.int64)
        if 0 < target.sum() < len(target):
            out[c] = auc_binary(scores[:, c], target)
    return out


def auc_macro(scores, labels) -> float:
    """Unweighted one-vs-rest AUC over classes.

    With two columns this is the binary AUC of the class-1 score, matching the
    usual MedMNIST convention.
    """
    scores, labels = check_predictions(scores, labels)
    if scores.shape[1] == 2:
        return auc_binary(scores[:, 1], labels)
    aucs = per_class_auc(scores, labels)
    if not aucs:
        raise UndefinedMetricError("no class admits a one-vs-rest split")
    values = list(aucs.values())
    return sum(values) / len(values)


def accuracy(scores, labels) -> float:
    """Fraction of rows whose argmax matches the label (ties go to the lowest index)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_labels(labels)
    if len(labels) == 0:
        raise DataError("accuracy of an empty batch")
    return float(np.mean(scores.argmax(axis=1) == labels))
