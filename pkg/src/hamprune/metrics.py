from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

EPS_CLIP = 1e-12


@dataclass(frozen=True)
class EvalResult:
    logloss: float
    auc: float
    n_samples: int


def logloss(predictions, labels) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("logloss of empty input")
    p = np.clip(p, EPS_CLIP, 1.0 - EPS_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    ranks = rankdata(s)  # average ranks handle ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(predictions, labels) -> EvalResult:
    return EvalResult(logloss(predictions, labels), auc(predictions, labels), int(np.size(labels)))
