"""Ranking metrics for anomaly scores: AUROC (tie-averaged ranks) and AUPRC
(step-interpolated precision-recall area)."""

from __future__ import annotations

import numpy as np


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if y.sum() == 0 or y.sum() == y.shape[0]:
        raise ValueError("metric undefined: need at least one positive and "
                         "one negative label")
    return s, y.astype(np.int64)


def _average_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.shape[0], dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.shape[0]:
        j = i
        while j + 1 < s.shape[0] and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # 1-based mean rank
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Probability a positive outranks a negative; ties count half."""
    s, y = _validate(scores, labels)
    ranks = _average_ranks(s)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve by right-step interpolation.

    Thresholds sweep the distinct scores descending; tied scores enter
    together. Area = sum over thresholds of (delta recall) * precision.
    """
    s, y = _validate(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each distinct-score block
    block_end = np.flatnonzero(np.diff(s_sorted) != 0)
    block_end = np.append(block_end, s_sorted.shape[0] - 1)
    tp = np.cumsum(y_sorted)[block_end].astype(np.float64)
    n_seen = (block_end + 1).astype(np.float64)
    precision = tp / n_seen
    recall = tp / y.sum()
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())
