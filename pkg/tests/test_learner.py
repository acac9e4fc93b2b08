import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from skillxg.learner import (
    GbdtModel,
    GbdtParams,
    auc,
    brier,
    evaluate,
    feature_importance_gain,
    fit_gbdt,
    log_loss,
    logistic_grad_hess,
    logistic_loss,
    predict,
    search,
    stratified_folds,
    tune,
)
from skillxg.learner.gbdt import FeatureSpec, Tree

from . import oracles

GOLDEN = Path(__file__).parent / "golden"


def _mixed(n=600, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = rng.uniform(-1, 1, size=n)
    kind = rng.choice(["a", "b", "c"], size=n)
    x[rng.random(n) < 0.05] = np.nan
    logit = 1.5 * np.nan_to_num(x) - z + (kind == "b")
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    return pd.DataFrame({"x": x, "z": z, "kind": kind}), y


# loss derivatives ---------------------------------------------------------------------


@settings(max_examples=200)
@given(st.floats(1e-4, 1 - 1e-4), st.integers(0, 1))
def test_grad_hess_match_finite_differences(p, y):
    raw = math.log(p / (1 - p))
    h = 1e-4
    g, hh = logistic_grad_hess(np.array([raw]), np.array([y]))
    f = lambda r: float(logistic_loss(np.array([r]), np.array([y]))[0])
    fd_g = (f(raw + h) - f(raw - h)) / (2 * h)
    fd_h = (f(raw + h) - 2 * f(raw) + f(raw - h)) / h**2
    assert g[0] == pytest.approx(fd_g, abs=1e-6)
    assert hh[0] == pytest.approx(fd_h, abs=1e-6)


# splits -----------------------------------------------------------------------


def _objective(g, h, lam, w):
    return float(np.sum(g * w + 0.5 * h * w * w) + 0.5 * lam * w * w)


def _best_leaf(g, h, lam):
    res = minimize_scalar(lambda w: _objective(g, h, lam, w), bracket=(-5, 5), tol=1e-12)
    return res.fun


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(8, 64), st.floats(0.0, 5.0))
def test_root_gain_equals_brute_force_loss_reduction(seed, n, lam):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 12, size=n).astype(float)
    y = (rng.random(n) < 0.2 + 0.05 * x).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    params = GbdtParams(n_estimators=1, learning_rate=1.0, max_depth=1, num_leaves=2, min_data_in_leaf=1, l2_lambda=lam)
    model = fit_gbdt(x.reshape(-1, 1), y, params)
    rate = y.mean()
    g, h = logistic_grad_hess(np.full(n, math.log(rate / (1 - rate))), y)
    parent = _best_leaf(g, h, lam)
    reductions = {}
    for t in np.unique(x)[:-1]:
        left = x <= t
        reductions[t] = parent - _best_leaf(g[left], h[left], lam) - _best_leaf(g[~left], h[~left], lam)
    tree = model.trees[0]
    best = max(reductions.values())
    if best <= 1e-10:
        assert tree.feature[0] == -1
        return
    assert tree.gain[0] == pytest.approx(best, abs=1e-7)
    left = x <= tree.threshold[0]
    gl, hl = g[left].sum(), h[left].sum()
    leaves = tree.value[tree.feature < 0]
    assert -gl / (hl + lam) in [pytest.approx(v, abs=1e-12) for v in leaves]


def test_training_loss_non_increasing():
    rows, y = _mixed(1500, seed=3)
    model = fit_gbdt(rows, y, GbdtParams(n_estimators=60, learning_rate=0.2, num_leaves=8, max_depth=4, seed=1))
    hist = np.array(model.history["train"])
    assert np.all(np.diff(hist) <= 1e-12)


def test_separable_data_reaches_high_auc():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 1))
    y = (x[:, 0] > 0).astype(int)
    model = fit_gbdt(x[:2000], y[:2000], GbdtParams(n_estimators=30))
    assert auc(model.predict_proba(x[2000:]), y[2000:]) >= 0.99


def test_identical_seeds_give_identical_bytes(tmp_path):
    rows, y = _mixed()
    params = GbdtParams(n_estimators=25, feature_fraction=0.7, bagging_fraction=0.8, seed=5)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    fit_gbdt(rows, y, params).save(a)
    fit_gbdt(rows, y, params).save(b)
    assert a.read_bytes() == b.read_bytes()


def test_row_order_does_not_matter():
    rows, y = _mixed()
    perm = np.random.default_rng(9).permutation(len(y))
    params = GbdtParams(n_estimators=20, feature_fraction=0.7, bagging_fraction=0.8, seed=2)
    a = fit_gbdt(rows, y, params)
    b = fit_gbdt(rows.iloc[perm].reset_index(drop=True), y[perm], params)
    assert a.to_json() == b.to_json()


def test_constant_features_predict_base_rate():
    y = np.array([1, 0, 0, 0] * 25)
    model = fit_gbdt(np.ones((100, 2)), y, GbdtParams(n_estimators=10))
    assert np.allclose(model.predict_proba(np.ones((3, 2))), 0.25, atol=1e-12)
    assert all(t.feature[0] == -1 for t in model.trees)


def test_fit_errors():
    with pytest.raises(ValueError, match="single class"):
        fit_gbdt(np.zeros((5, 1)), np.zeros(5))
    with pytest.raises(ValueError, match="empty"):
        fit_gbdt(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        GbdtParams(num_leaves=9, max_depth=3)


def test_missing_values_route_to_better_side():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2000)
    y = (x > 0).astype(int)
    x = np.where((y == 1) & (rng.random(2000) < 0.3), np.nan, x)
    model = fit_gbdt(x.reshape(-1, 1), y, GbdtParams(n_estimators=20))
    assert model.predict_proba(np.array([[np.nan]]))[0] > 0.9


def test_categorical_one_hot_and_unseen_category():
    rows, y = _mixed()
    model = fit_gbdt(rows, y, GbdtParams(n_estimators=10))
    assert model.columns == ["x", "z", "kind=a", "kind=b", "kind=c"]
    unseen = predict(model, {"x": 0.1, "z": 0.2, "kind": "zzz"})
    assert 0 < unseen < 1


# prediction -----------------------------------------------------------------------


def _single_split(threshold=0.5, lo=-1.0, hi=2.0):
    tree = Tree(
        feature=np.array([0, -1, -1]),
        threshold=np.array([threshold, 0, 0.0]),
        missing_left=np.array([True, False, False]),
        left=np.array([1, -1, -1]),
        right=np.array([2, -1, -1]),
        value=np.array([0.0, lo, hi]),
        gain=np.array([4.0, 0, 0]),
    )
    model = GbdtModel([FeatureSpec("a", "numeric"), FeatureSpec("b", "numeric")], GbdtParams(), 0.3, [tree])
    model.gains = np.array([4.0, 0.0])
    return model


def test_zero_trees_predict_sigmoid_of_base():
    model = GbdtModel([FeatureSpec("a", "numeric")], GbdtParams(), -1.2)
    assert predict(model, {"a": 3.0}) == pytest.approx(1 / (1 + math.exp(1.2)), abs=1e-15)


def test_single_split_tree_outputs():
    model = _single_split()
    p = model.predict_proba(np.array([[0.2, 0], [0.5, 0], [0.9, 0], [np.nan, 0]]))
    sig = lambda r: 1 / (1 + math.exp(-r))
    assert p == pytest.approx([sig(-0.7), sig(-0.7), sig(2.3), sig(-0.7)], abs=1e-15)


def test_schema_mismatch_names_feature():
    with pytest.raises(KeyError, match="'b'"):
        predict(_single_split(), {"a": 1.0})
    with pytest.raises(ValueError, match="'a'"):
        predict(_single_split(), {"a": "text", "b": 1.0})


def test_model_json_round_trip():
    rows, y = _mixed()
    model = fit_gbdt(rows, y, GbdtParams(n_estimators=15))
    again = GbdtModel.from_json(model.to_json())
    assert again.to_json() == model.to_json()
    assert np.array_equal(again.predict_proba(rows), model.predict_proba(rows))


def test_golden_model():
    doc = json.loads((GOLDEN / "gbdt_case.json").read_text())
    rows, y = _mixed(**doc["data"])
    model = fit_gbdt(rows, y, GbdtParams.from_dict(doc["params"]))
    assert model.to_json() == (GOLDEN / "gbdt_model.json").read_text()
    stored = GbdtModel.load(GOLDEN / "gbdt_model.json")
    assert predict(stored, doc["row"]) == doc["probability"]


# importance -----------------------------------------------------------------------


def test_importance_examples():
    model = _single_split()
    assert feature_importance_gain(model) == {"a": 1.0, "b": 0.0}
    model.gains = np.array([3.0, 1.0])
    assert feature_importance_gain(model) == {"a": 0.75, "b": 0.25}
    empty = GbdtModel([FeatureSpec("a", "numeric"), FeatureSpec("b", "numeric")], GbdtParams(), 0.0)
    empty.gains = np.zeros(2)
    assert feature_importance_gain(empty) == {"a": 0.5, "b": 0.5}


def test_importance_folds_one_hot_columns():
    rows, y = _mixed()
    imp = feature_importance_gain(fit_gbdt(rows, y, GbdtParams(n_estimators=20)))
    assert set(imp) == {"x", "z", "kind"}
    assert sum(imp.values()) == pytest.approx(1.0, abs=1e-12) and min(imp.values()) >= 0


# tuning -----------------------------------------------------------------------


def test_stratified_folds_balance():
    y = np.array([1] * 10 + [0] * 90)
    folds = stratified_folds(y, 5, 0)
    for f in range(5):
        assert (y[folds == f] == 1).sum() == 2 and (folds == f).sum() == 20
    assert np.array_equal(folds, stratified_folds(y, 5, 0))


def test_tuner_budget_one_returns_sampled_configuration():
    rows, y = _mixed(300)
    space = {"learning_rate": {"dist": "loguniform", "low": 0.05, "high": 0.3}, "num_leaves": {"choice": [4, 8]}, "max_depth": 3, "n_estimators": 10}
    result = search(rows, y, space, budget=1, k=3, seed=4)
    assert len(result.trials) == 1 and result.best == result.trials[0].params
    assert result.best.n_estimators == 10 and result.best.max_depth == 3


def test_tuner_rejects_degenerate_learning_rate():
    rows, y = _mixed(400)
    good = {"learning_rate": 0.1, "n_estimators": 30, "max_depth": 3, "num_leaves": 8}
    bad = dict(good, learning_rate=1e-9)
    assert tune(rows, y, [bad, good], budget=2, k=3, seed=0).learning_rate == 0.1
    assert tune(rows, y, [good, bad], budget=2, k=3, seed=0).learning_rate == 0.1


def test_tuner_is_deterministic_and_breaks_ties_early():
    rows, y = _mixed(300)
    space = {"learning_rate": {"dist": "uniform", "low": 0.05, "high": 0.3}, "n_estimators": 8, "max_depth": 3, "num_leaves": 4}
    assert tune(rows, y, space, budget=3, k=3, seed=7) == tune(rows, y, space, budget=3, k=3, seed=7)
    same = {"learning_rate": 0.1, "n_estimators": 8, "max_depth": 3, "num_leaves": 4}
    result = search(rows, y, [dict(same, seed=0), dict(same, seed=0)], budget=2, k=3)
    assert result.trials[0].score == result.trials[1].score and result.best is result.trials[0].params


def test_tuner_freezes_early_stopped_rounds():
    rows, y = _mixed(400)
    space = [{"learning_rate": 0.3, "n_estimators": 400, "early_stopping_rounds": 5, "max_depth": 3, "num_leaves": 8}]
    result = search(rows, y, space, budget=1, k=3)
    assert result.best.early_stopping_rounds == 0
    assert result.best.n_estimators == round(np.mean(result.trials[0].best_iterations))


def test_tuner_errors():
    with pytest.raises(ValueError, match="empty"):
        tune(*_mixed(100), space={}, budget=1)
    with pytest.raises(ValueError, match="budget"):
        tune(*_mixed(100), budget=0)


# metrics -----------------------------------------------------------------------


def test_metric_examples():
    assert log_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-15)
    assert brier([0.5, 0.5], [1, 0]) == 0.25 and auc([0.5, 0.5], [1, 0]) == 0.5
    assert brier([1.0, 0.0], [1, 0]) == 0.0
    assert auc([0.9, 0.8, 0.1], [1, 0, 0]) == 1.0
    assert log_loss([0.0], [1]) == pytest.approx(-math.log(1e-15))
    with pytest.raises(ValueError):
        auc([0.3, 0.4], [1, 1])
    assert evaluate([0.5, 0.5], [1, 0]).to_dict() == {"log_loss": log_loss([0.5, 0.5], [1, 0]), "auc": 0.5, "brier": 0.25}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 500))
def test_auc_equals_pairwise_oracle(seed, n):
    rng = np.random.default_rng(seed)
    preds = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding forces ties
    y = (rng.random(n) < 0.3).astype(int)
    y[0], y[-1] = 1, 0
    assert auc(preds, y) == oracles.auc_pairs(preds, y)
