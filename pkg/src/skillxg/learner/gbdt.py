"""Histogram gradient-boosted decision trees for binary outcomes.

Trees are grown leaf-wise (best gain first) on quantile-binned features
under logistic loss, with second-order split gain

    gain = 1/2 * [G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - G^2/(H+l2)]

and leaf value ``-learning_rate * G / (H + l2)``. Missing values get their
own histogram bin and are sent to whichever child gives the larger gain.
Categorical columns are one-hot expanded against the vocabulary seen at
fit time; unseen categories are treated as missing.

Rows are put in a canonical order before fitting so the model does not
depend on how the caller ordered them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numba
import numpy as np
import pandas as pd

FORMAT_VERSION = 1
MISSING_BIN = 255
MAX_VALUE_BINS = 255
MIN_GAIN = 1e-10
EPS = 1e-15


@dataclass(frozen=True)
class GbdtParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    num_leaves: int = 31
    min_data_in_leaf: int = 20
    l2_lambda: float = 1.0
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    max_bins: int = 256
    early_stopping_rounds: int = 0  # 0 disables
    seed: int = 0

    def __post_init__(self):
        for name in ("n_estimators", "max_depth", "num_leaves", "min_data_in_leaf", "max_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if self.early_stopping_rounds < 0:
            raise ValueError("early_stopping_rounds must be non-negative")
        if not (0 < self.feature_fraction <= 1 and 0 < self.bagging_fraction <= 1):
            raise ValueError("feature_fraction and bagging_fraction must be in (0, 1]")
        if self.num_leaves > 2**self.max_depth:
            raise ValueError("num_leaves must not exceed 2**max_depth")
        if self.max_bins < 2 or self.max_bins > MAX_VALUE_BINS + 1:
            raise ValueError(f"max_bins must be in [2, {MAX_VALUE_BINS + 1}]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GbdtParams":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ValueError(f"unknown parameter {k!r}")
            kwargs[k] = float(v) if known[k] == "float" else int(v)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# schema and encoding


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: tuple = ()

    def columns(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        return [f"{self.name}={c}" for c in self.categories]


def _is_categorical(series: pd.Series) -> bool:
    return series.dtype == object or isinstance(series.dtype, pd.CategoricalDtype) or pd.api.types.is_string_dtype(series.dtype)


def _cat_key(value) -> Optional[str]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return str(value)


def infer_schema(rows, categorical: Optional[Sequence[str]] = None) -> list[FeatureSpec]:
    if isinstance(rows, pd.DataFrame):
        cats = set(categorical) if categorical is not None else {c for c in rows.columns if _is_categorical(rows[c])}
        schema = []
        for name in rows.columns:
            if name in cats:
                vocab = sorted({k for k in map(_cat_key, rows[name]) if k is not None})
                schema.append(FeatureSpec(str(name), "categorical", tuple(vocab)))
            else:
                schema.append(FeatureSpec(str(name), "numeric"))
        return schema
    arr = np.asarray(rows)
    if arr.ndim != 2:
        raise ValueError("rows must be two-dimensional")
    return [FeatureSpec(f"f{j}", "numeric") for j in range(arr.shape[1])]


def encode(rows, schema: Sequence[FeatureSpec]) -> np.ndarray:
    """Expand rows to the model's float column layout (NaN = missing)."""
    if isinstance(rows, Mapping):
        rows = pd.DataFrame([rows])
    if isinstance(rows, pd.Series):
        rows = rows.to_frame().T
    if isinstance(rows, pd.DataFrame):
        n = len(rows)
        cols = []
        for spec in schema:
            if spec.name not in rows.columns:
                raise KeyError(f"feature {spec.name!r} missing from rows")
            values = rows[spec.name]
            if spec.kind == "numeric":
                try:
                    cols.append(pd.to_numeric(values, errors="raise").to_numpy(dtype=float, na_value=np.nan).reshape(n, 1))
                except (ValueError, TypeError) as exc:
                    raise ValueError(f"feature {spec.name!r} is not numeric") from exc
            else:
                cols.append(_one_hot([_cat_key(v) for v in values], spec.categories))
        return np.ascontiguousarray(np.hstack(cols)) if cols else np.empty((n, 0))
    arr = np.asarray(rows)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != len(schema):
        raise ValueError(f"expected {len(schema)} features, got {arr.shape[1]}")
    if any(s.kind != "numeric" for s in schema):
        return encode(pd.DataFrame(arr, columns=[s.name for s in schema]), schema)
    return np.ascontiguousarray(arr, dtype=float)


def _one_hot(keys: list, categories: tuple) -> np.ndarray:
    index = {c: j for j, c in enumerate(categories)}
    out = np.zeros((len(keys), len(categories)))
    for i, k in enumerate(keys):
        j = index.get(k)
        if j is None:
            out[i, :] = np.nan
        else:
            out[i, j] = 1.0
    return out


def bin_edges(column: np.ndarray, max_bins: int) -> np.ndarray:
    """Split points between value bins; ``x <= edges[b]`` is bin ``<= b``."""
    values = column[~np.isnan(column)]
    if values.size == 0:
        return np.empty(0)
    uniq = np.unique(values)
    n_value_bins = min(max_bins - 1, MAX_VALUE_BINS)
    if uniq.size <= n_value_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(values, np.linspace(0, 1, n_value_bins + 1)[1:-1], method="lower")
    upper = uniq[np.minimum(np.searchsorted(uniq, qs, side="right"), uniq.size - 1)]
    edges = np.unique((qs + upper) / 2.0)
    return edges[edges < uniq[-1]]


def apply_bins(X: np.ndarray, edges: Sequence[np.ndarray]) -> np.ndarray:
    """Bin indices, column-major: shape (n_columns, n_rows)."""
    out = np.empty((X.shape[1], X.shape[0]), dtype=np.uint8)
    for j, e in enumerate(edges):
        col = X[:, j]
        b = np.searchsorted(e, col, side="left")
        b[np.isnan(col)] = MISSING_BIN
        out[j] = b
    return out


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _histogram(binned_t, idx, grad, hess, feats):
    """Per-column (grad, hess, count) sums by bin; ``binned_t`` is column-major."""
    n_cols = binned_t.shape[0]
    out = np.zeros((n_cols, 256, 3))
    gs = np.empty(idx.shape[0])
    hs = np.empty(idx.shape[0])
    for ii in range(idx.shape[0]):
        gs[ii] = grad[idx[ii]]
        hs[ii] = hess[idx[ii]]
    for k in range(feats.shape[0]):
        f = feats[k]
        col = binned_t[f]
        hist = out[f]
        for ii in range(idx.shape[0]):
            b = col[idx[ii]]
            hist[b, 0] += gs[ii]
            hist[b, 1] += hs[ii]
            hist[b, 2] += 1.0
    return out


@numba.njit(cache=True)
def _gain(gl, hl, gr, hr, g, h, lam):
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam))


@numba.njit(cache=True)
def _best_split(hist, feats, n_value_bins, g_tot, h_tot, n_tot, lam, min_data):
    best_gain = 0.0
    best_f = -1
    best_b = -1
    best_ml = False
    for k in range(feats.shape[0]):
        f = feats[k]
        mg = hist[f, 255, 0]
        mh = hist[f, 255, 1]
        mc = hist[f, 255, 2]
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for b in range(n_value_bins[f] - 1):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            cl += hist[f, b, 2]
            # missing values to the right
            cr = n_tot - cl
            if cl >= min_data and cr >= min_data and hl + lam > 0 and h_tot - hl + lam > 0:
                gain = _gain(gl, hl, g_tot - gl, h_tot - hl, g_tot, h_tot, lam)
                if gain > best_gain:
                    best_gain, best_f, best_b, best_ml = gain, f, b, False
            if mc > 0:
                cl2 = cl + mc
                cr2 = n_tot - cl2
                gl2 = gl + mg
                hl2 = hl + mh
                if cl2 >= min_data and cr2 >= min_data and hl2 + lam > 0 and h_tot - hl2 + lam > 0:
                    gain = _gain(gl2, hl2, g_tot - gl2, h_tot - hl2, g_tot, h_tot, lam)
                    if gain > best_gain:
                        best_gain, best_f, best_b, best_ml = gain, f, b, True
    return best_gain, best_f, best_b, best_ml


@numba.njit(cache=True)
def _partition(binned_t, idx, f, b, missing_left):
    col = binned_t[f]
    left = np.empty(idx.shape[0], dtype=idx.dtype)
    right = np.empty(idx.shape[0], dtype=idx.dtype)
    nl = 0
    nr = 0
    for ii in range(idx.shape[0]):
        i = idx[ii]
        v = col[i]
        if v == 255:
            go_left = missing_left
        else:
            go_left = v <= b
        if go_left:
            left[nl] = i
            nl += 1
        else:
            right[nr] = i
            nr += 1
    return left[:nl], right[:nr]


@numba.njit(cache=True)
def _predict_raw(X, feature, threshold, missing_left, left, right, value, roots, out):
    n = X.shape[0]
    for t in range(roots.shape[0]):
        root = roots[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                x = X[i, feature[node]]
                if np.isnan(x):
                    go_left = missing_left[node]
                else:
                    go_left = x <= threshold[node]
                node = left[node] if go_left else right[node]
            out[i] += value[node]
    return out


@numba.njit(cache=True)
def _sigmoid(raw):
    out = np.empty_like(raw)
    for i in range(raw.shape[0]):
        r = raw[i]
        if r >= 0:
            out[i] = 1.0 / (1.0 + math.exp(-r))
        else:
            e = math.exp(r)
            out[i] = e / (1.0 + e)
    return out


def sigmoid(raw) -> np.ndarray:
    return _sigmoid(np.asarray(raw, dtype=float).ravel())


def logistic_loss(raw, y):
    """Per-row logistic loss as a function of the raw score."""
    raw = np.asarray(raw, dtype=float)
    return np.logaddexp(0.0, raw) - np.asarray(y, dtype=float) * raw


def logistic_grad_hess(raw, y) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of :func:`logistic_loss` w.r.t. the raw score."""
    p = sigmoid(raw).reshape(np.shape(raw))
    return p - np.asarray(y, dtype=float), p * (1.0 - p)


def _mean_log_loss(raw, y) -> float:
    p = np.clip(sigmoid(raw), EPS, 1 - EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# ---------------------------------------------------------------------------
# model


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray  # split gain per node, 0 at leaves

    def to_dict(self) -> dict:
        return {
            "gain": self.gain.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "missing_left": self.missing_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["missing_left"], dtype=np.bool_),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["gain"], dtype=float),
        )


@dataclass
class GbdtModel:
    schema: list
    params: GbdtParams
    base_score: float
    trees: list = field(default_factory=list)
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        self._packed = None

    @property
    def columns(self) -> list[str]:
        return [c for spec in self.schema for c in spec.columns()]

    @property
    def column_parents(self) -> list[str]:
        return [spec.name for spec in self.schema for _ in spec.columns()]

    @property
    def feature_names(self) -> list[str]:
        return [spec.name for spec in self.schema]

    def _pack(self):
        if self._packed is None:
            sizes = [t.feature.size for t in self.trees]
            roots = np.cumsum([0] + sizes[:-1]).astype(np.int64)
            def cat(attr, dtype):
                parts = [getattr(t, attr) for t in self.trees]
                return np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)
            offs = np.repeat(roots, sizes) if self.trees else np.empty(0, np.int64)
            left, right = cat("left", np.int64), cat("right", np.int64)
            feature = cat("feature", np.int64)
            leaf = feature < 0
            left = np.where(leaf, -1, left + offs)
            right = np.where(leaf, -1, right + offs)
            self._packed = (feature, cat("threshold", float), cat("missing_left", np.bool_), left, right, cat("value", float), roots)
        return self._packed

    def raw_encoded(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        if self.trees:
            _predict_raw(X, *self._pack(), out)
        return out

    def predict_raw(self, rows) -> np.ndarray:
        return self.raw_encoded(encode(rows, self.schema))

    def predict_proba(self, rows) -> np.ndarray:
        return sigmoid(self.predict_raw(rows))

    def to_dict(self) -> dict:
        return {
            "format": "skillxg-gbdt",
            "version": FORMAT_VERSION,
            "params": self.params.to_dict(),
            "schema": [{"name": s.name, "kind": s.kind, "categories": list(s.categories)} for s in self.schema],
            "base_score": float(self.base_score),
            "trees": [t.to_dict() for t in self.trees],
            "gains": dict(zip(self.columns, map(float, self.gains))),
            "history": {k: [float(v) for v in vals] for k, vals in self.history.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GbdtModel":
        if d.get("format") != "skillxg-gbdt" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a skillxg GBDT model document")
        schema = [FeatureSpec(s["name"], s["kind"], tuple(s["categories"])) for s in d["schema"]]
        model = cls(schema, GbdtParams.from_dict(d["params"]), float(d["base_score"]), [Tree.from_dict(t) for t in d["trees"]])
        model.gains = column_gains(model.trees, len(model.columns))
        model.history = {k: list(v) for k, v in d.get("history", {}).items()}
        return model

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "GbdtModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def predict(model: GbdtModel, row):
    """Goal probability. A single mapping gives a float, a table gives an array."""
    if isinstance(row, (Mapping, pd.Series)):
        return float(model.predict_proba(row)[0])
    return model.predict_proba(row)


# ---------------------------------------------------------------------------
# fitting


class _Grower:
    def __init__(self, binned, n_value_bins, edges, params: GbdtParams):
        self.binned = binned
        self.n_value_bins = n_value_bins
        self.edges = edges
        self.p = params

    def grow(self, idx, grad, hess, feats) -> Tree:
        p = self.p
        lam = p.l2_lambda
        feature, thr, ml, left, right, value, gains = [], [], [], [], [], [], []

        def new_node():
            for lst, v in ((feature, -1), (thr, 0.0), (ml, False), (left, -1), (right, -1), (value, 0.0), (gains, 0.0)):
                lst.append(v)
            return len(feature) - 1

        def leaf_state(node, rows, depth, hist):
            if hist is None:
                hist = _histogram(self.binned, rows, grad, hess, feats)
            # every row lands in exactly one bin of any column
            g = float(hist[feats[0], :, 0].sum())
            h = float(hist[feats[0], :, 1].sum())
            value[node] = -p.learning_rate * g / (h + lam) if h + lam > 0 else 0.0
            split = (0.0, -1, -1, False)
            if depth < p.max_depth and rows.size >= 2 * p.min_data_in_leaf:
                split = _best_split(hist, feats, self.n_value_bins, g, h, rows.size, lam, p.min_data_in_leaf)
            return {"node": node, "rows": rows, "depth": depth, "hist": hist, "split": split}

        leaves = [leaf_state(new_node(), idx, 0, None)]
        while len(leaves) < p.num_leaves:
            best = None
            for i, lf in enumerate(leaves):
                if lf["split"][1] >= 0 and lf["split"][0] > MIN_GAIN and (best is None or lf["split"][0] > leaves[best]["split"][0]):
                    best = i
            if best is None:
                break
            lf = leaves.pop(best)
            gain, f, b, miss_left = lf["split"]
            lrows, rrows = _partition(self.binned, lf["rows"], f, b, miss_left)
            node = lf["node"]
            feature[node], thr[node], ml[node] = f, float(self.edges[f][b]), bool(miss_left)
            gains[node] = float(gain)
            lnode, rnode = new_node(), new_node()
            left[node], right[node] = lnode, rnode
            small, large = (lrows, rrows) if lrows.size <= rrows.size else (rrows, lrows)
            hs = _histogram(self.binned, small, grad, hess, feats)
            hl = lf["hist"] - hs
            h_left, h_right = (hs, hl) if small is lrows else (hl, hs)
            leaves.append(leaf_state(lnode, lrows, lf["depth"] + 1, h_left))
            leaves.append(leaf_state(rnode, rrows, lf["depth"] + 1, h_right))
            leaves.sort(key=lambda s: s["node"])
        return Tree(
            np.array(feature, dtype=np.int64),
            np.array(thr, dtype=float),
            np.array(ml, dtype=np.bool_),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(value, dtype=float),
            np.array(gains, dtype=float),
        )


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # any total order over row contents works; identical rows are interchangeable
    return np.lexsort([y] + [X[:, j] for j in range(X.shape[1])])


def fit_gbdt(
    rows,
    labels,
    params: Optional[GbdtParams] = None,
    valid: Optional[tuple] = None,
    categorical: Optional[Sequence[str]] = None,
) -> GbdtModel:
    """Fit a boosted ensemble on ``rows`` (DataFrame or 2-D array) and 0/1 ``labels``.

    ``valid`` is an optional ``(rows, labels)`` holdout; with
    ``params.early_stopping_rounds > 0`` the ensemble is truncated at the
    round with the lowest holdout log loss.
    """
    params = params or GbdtParams()
    y = np.asarray(labels, dtype=float).ravel()
    n = len(rows)
    if n == 0:
        raise ValueError("empty feature matrix")
    if y.size != n:
        raise ValueError("rows and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    schema = infer_schema(rows, categorical)
    X = encode(rows, schema)
    order = _canonical_order(X, y)
    X, y = X[order], y[order]

    edges = [bin_edges(X[:, j], params.max_bins) for j in range(X.shape[1])]
    binned = apply_bins(X, edges)
    n_value_bins = np.array([e.size + 1 for e in edges], dtype=np.int64)

    rate = float(np.clip(y.mean(), EPS, 1 - EPS))
    base = math.log(rate / (1 - rate))
    model = GbdtModel(schema, params, base)
    model.history = {"train": []}

    Xv = yv = raw_v = None
    if valid is not None:
        Xv = encode(valid[0], schema)
        yv = np.asarray(valid[1], dtype=float).ravel()
        raw_v = np.full(len(yv), base)
        model.history["valid"] = []

    rng = np.random.default_rng(params.seed)
    grower = _Grower(binned, n_value_bins, edges, params)
    raw = np.full(n, base)
    all_rows = np.arange(n, dtype=np.int64)
    n_cols = X.shape[1]
    best_loss, best_iter, stall = math.inf, 0, 0
    for _ in range(params.n_estimators):
        grad, hess = logistic_grad_hess(raw, y)
        if params.bagging_fraction < 1:
            k = max(1, int(round(params.bagging_fraction * n)))
            idx = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
        else:
            idx = all_rows
        if params.feature_fraction < 1 and n_cols > 1:
            k = max(1, int(round(params.feature_fraction * n_cols)))
            feats = np.sort(rng.choice(n_cols, size=k, replace=False)).astype(np.int64)
        else:
            feats = np.arange(n_cols, dtype=np.int64)
        if n_cols == 0:
            break
        tree = grower.grow(idx, grad, hess, feats)
        model.trees.append(tree)
        model._packed = None
        raw = raw + _tree_raw(tree, X)
        model.history["train"].append(_mean_log_loss(raw, y))
        if valid is not None:
            raw_v = raw_v + _tree_raw(tree, Xv)
            loss_v = _mean_log_loss(raw_v, yv)
            model.history["valid"].append(loss_v)
            if params.early_stopping_rounds:
                if loss_v < best_loss:
                    best_loss, best_iter, stall = loss_v, len(model.trees), 0
                else:
                    stall += 1
                    if stall >= params.early_stopping_rounds:
                        break
    if valid is not None and params.early_stopping_rounds and len(model.trees) > best_iter:
        model.trees = model.trees[:best_iter]
    model.gains = column_gains(model.trees, n_cols)
    model._packed = None
    model.history["best_iteration"] = [len(model.trees)]
    return model


def column_gains(trees, n_cols: int) -> np.ndarray:
    gains = np.zeros(n_cols)
    for t in trees:
        split = t.feature >= 0
        np.add.at(gains, t.feature[split], t.gain[split])
    return gains


def _tree_raw(tree: Tree, X: np.ndarray) -> np.ndarray:
    out = np.zeros(X.shape[0])
    return _predict_raw(
        X, tree.feature, tree.threshold, tree.missing_left, tree.left, tree.right, tree.value, np.zeros(1, np.int64), out
    )
