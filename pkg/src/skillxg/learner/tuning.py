"""Hyperparameter search with k-fold cross-validated log loss.

A search space maps parameter names to a fixed value or a distribution::

    {"learning_rate": {"dist": "loguniform", "low": 0.01, "high": 0.3},
     "num_leaves": {"dist": "int", "low": 15, "high": 255},
     "max_depth": {"choice": [4, 6, 8]},
     "n_estimators": 500}

A list of explicit parameter dicts is also accepted; trials then walk the
list in order. The sampling strategy is pluggable (anything with a
``propose(space, budget, rng)`` method); the default is seeded random search.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd

from .gbdt import GbdtParams, fit_gbdt
from .metrics import log_loss

logger = logging.getLogger(__name__)

DEFAULT_SPACE = {
    "learning_rate": {"dist": "loguniform", "low": 0.01, "high": 0.3},
    "num_leaves": {"dist": "int", "low": 15, "high": 255},
    "max_depth": {"dist": "int", "low": 3, "high": 10},
    "min_data_in_leaf": {"dist": "int", "low": 20, "high": 200},
    "l2_lambda": {"dist": "loguniform", "low": 1e-3, "high": 10.0},
    "feature_fraction": {"dist": "uniform", "low": 0.6, "high": 1.0},
    "bagging_fraction": {"dist": "uniform", "low": 0.6, "high": 1.0},
    "n_estimators": 2000,
    "early_stopping_rounds": 50,
}

Space = Union[Mapping[str, Any], Sequence[Mapping[str, Any]]]


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    y = np.asarray(labels).ravel()
    if k < 2:
        raise ValueError("k must be at least 2")
    if y.size < k:
        raise ValueError("fewer rows than folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return folds


def _sample(spec, rng: np.random.Generator):
    if not isinstance(spec, Mapping):
        return spec
    if "choice" in spec:
        options = list(spec["choice"])
        return options[int(rng.integers(len(options)))]
    dist, lo, hi = spec["dist"], spec["low"], spec["high"]
    if dist == "uniform":
        return float(rng.uniform(lo, hi))
    if dist == "loguniform":
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    if dist == "int":
        return int(rng.integers(lo, hi + 1))
    raise ValueError(f"unknown distribution {dist!r}")


class Strategy(Protocol):
    def propose(self, space: Space, budget: int, rng: np.random.Generator) -> list[dict]: ...


class RandomSearch:
    def propose(self, space: Space, budget: int, rng: np.random.Generator) -> list[dict]:
        if isinstance(space, Sequence) and not isinstance(space, (str, bytes)):
            return [dict(c) for c in list(space)[:budget]]
        trials = []
        for _ in range(budget):
            trial = {name: _sample(spec, rng) for name, spec in space.items()}
            if "num_leaves" in trial and "max_depth" in trial:
                trial["num_leaves"] = min(trial["num_leaves"], 2 ** trial["max_depth"])
            trials.append(trial)
        return trials


@dataclass
class Trial:
    params: GbdtParams
    score: float
    best_iterations: list = field(default_factory=list)


@dataclass
class SearchResult:
    best: GbdtParams
    trials: list


def _take(rows, idx):
    return rows.iloc[idx] if isinstance(rows, pd.DataFrame) else np.asarray(rows)[idx]


def cv_score(rows, labels, params: GbdtParams, folds: np.ndarray, categorical=None) -> tuple[float, list]:
    y = np.asarray(labels)
    losses, iters = [], []
    for f in np.unique(folds):
        tr, va = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
        model = fit_gbdt(_take(rows, tr), y[tr], params, valid=(_take(rows, va), y[va]), categorical=categorical)
        losses.append(log_loss(model.predict_proba(_take(rows, va)), y[va]))
        iters.append(len(model.trees))
    return float(np.mean(losses)), iters


def search(
    rows,
    labels,
    space: Optional[Space] = None,
    budget: int = 20,
    k: int = 5,
    seed: int = 0,
    strategy: Optional[Strategy] = None,
    base: Optional[GbdtParams] = None,
    categorical=None,
) -> SearchResult:
    if budget < 1:
        raise ValueError("budget must be at least 1")
    space = DEFAULT_SPACE if space is None else space
    if len(space) == 0:
        raise ValueError("empty search space")
    rng = np.random.default_rng(seed)
    strategy = strategy or RandomSearch()
    base = base or GbdtParams(seed=seed)
    folds = stratified_folds(labels, k, seed)
    trials = []
    best = None
    for i, proposal in enumerate(strategy.propose(space, budget, rng)):
        params = dataclasses.replace(base, **proposal)
        score, iters = cv_score(rows, labels, params, folds, categorical)
        trials.append(Trial(params, score, iters))
        logger.info("trial %d: cv log loss %.5f", i, score)
        if best is None or score < best.score:
            best = trials[-1]
    chosen = best.params
    if chosen.early_stopping_rounds:
        # refits have no holdout, so freeze the round count the folds settled on
        rounds = max(1, int(round(float(np.mean(best.best_iterations)))))
        chosen = dataclasses.replace(chosen, n_estimators=rounds, early_stopping_rounds=0)
    return SearchResult(chosen, trials)


def tune(rows, labels, space: Optional[Space] = None, budget: int = 20, k: int = 5, seed: int = 0, **kwargs) -> GbdtParams:
    """Parameters with the lowest mean k-fold validation log loss (earliest trial wins ties)."""
    return search(rows, labels, space, budget, k, seed, **kwargs).best
