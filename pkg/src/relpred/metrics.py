"""Ranking metrics: AUC-PR (average precision), AUC-ROC and Hits@K."""
from __future__ import annotations

from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """Metric needs both positive and negative examples."""


def _check(labels, scores):
    y = np.asarray(labels, dtype=bool).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError("labels and scores differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise UndefinedMetricError("need at least one positive and one negative")
    return y, s, n_pos


def auc_pr(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Area under the precision-recall curve as a step sum.

    Thresholds are the distinct scores in descending order; a tie group
    enters the curve as a single point. The area is the sum of
    precision * recall-increment over those points.
    """
    y, s, n_pos = _check(labels, scores)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    area = 0.0
    prev_tp = 0
    for t, n in zip(tp.tolist(), seen.tolist()):
        if t != prev_tp:
            area += (t / n) * ((t - prev_tp) / n_pos)
            prev_tp = t
    return area


def auc_roc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """P(random positive outscores random negative), ties count one half."""
    y, s, n_pos = _check(labels, scores)
    n_neg = len(y) - n_pos
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts.tolist(), ends.tolist()):
        ranks[order[a:b]] = (a + 1 + b) / 2.0
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rank_of(pos_score: float, neg_scores: Sequence[float]) -> int:
    """1-based rank of the positive; tied negatives are placed ahead of it."""
    return 1 + int(np.count_nonzero(np.asarray(neg_scores, dtype=np.float64) >= pos_score))


def hits_at_k(pos_score: float, neg_scores: Sequence[float], k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(rank_of(pos_score, neg_scores) <= k)
