"""Probability-forecast scores and gain-based feature importance."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

CLIP = 1e-15


@dataclass(frozen=True)
class MetricsBundle:
    log_loss: float
    auc: float
    brier: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check(preds, labels):
    p = np.asarray(preds, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.size != y.size:
        raise ValueError("preds and labels differ in length")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    return p, y


def log_loss(preds, labels) -> float:
    p, y = _check(preds, labels)
    p = np.clip(p, CLIP, 1 - CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def brier(preds, labels) -> float:
    p, y = _check(preds, labels)
    return float(np.mean((p - y) ** 2))


def auc(preds, labels) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count 1/2."""
    p, y = _check(preds, labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(p)  # average ranks, so each tie contributes 1/2
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(preds, labels) -> MetricsBundle:
    return MetricsBundle(log_loss(preds, labels), auc(preds, labels), brier(preds, labels))


def feature_importance_gain(model) -> dict[str, float]:
    """Total split gain per input feature (one-hot columns folded back), summing to 1."""
    totals: dict[str, float] = {name: 0.0 for name in model.feature_names}
    for parent, gain in zip(model.column_parents, model.gains):
        totals[parent] += float(gain)
    grand = sum(totals.values())
    if grand <= 0:
        return {name: 1.0 / len(totals) for name in totals} if totals else {}
    return {name: g / grand for name, g in totals.items()}
