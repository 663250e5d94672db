"""Evaluation metrics for binary click prediction."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

EPS = 1e-12


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic (ties averaged)."""
    labels = np.asarray(labels).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise ValueError("AUC of an empty split is undefined")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def log_loss(labels, probs) -> float:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise ValueError("log loss of an empty split is undefined")
    p = np.clip(np.asarray(probs, dtype=np.float64).reshape(-1), EPS, 1 - EPS)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log1p(-p)))
