"""Threshold-free pair metrics and value-set-level precision/recall/F1."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyInput


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    return s, y.astype(bool)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step (non-interpolated) AP; equal scores keep their input order."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateLabels("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision_at_k = tp / np.arange(1, len(hits) + 1)
    return float(precision_at_k[hits].sum() / n_pos)


def value_set_prf(predicted: Iterable[tuple[str, str]], truth: Iterable[tuple[str, str]]) -> tuple[float, float, float]:
    """Exact (code, system) matching; empty predictions score (0, 0, 0)."""
    pred = set(predicted)
    true = set(truth)
    if not true:
        raise EmptyInput("truth set must contain at least one code")
    tp = len(pred & true)
    precision = tp / len(pred) if pred else 0.0
    recall = tp / len(true)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def macro_aggregate(per_set: list[tuple[float, float, float]]) -> dict:
    """Unweighted means; SE(F1) uses the n-1 sample standard deviation."""
    if not per_set:
        raise EmptyInput("no value sets to aggregate")
    arr = np.asarray(per_set, dtype=np.float64)
    n = len(arr)
    se = float(np.std(arr[:, 2], ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {
        "precision": float(arr[:, 0].mean()),
        "recall": float(arr[:, 1].mean()),
        "f1": float(arr[:, 2].mean()),
        "se_f1": se,
        "se_defined": n > 1,
        "n": n,
    }


def pair_precision(decisions, labels) -> float:
    """Micro precision over individual (value set, candidate) pairs."""
    d = np.asarray(decisions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    return float((d & y).sum() / d.sum()) if d.any() else 0.0
