"""Stacked skill-adjusted xG protocol, end to end.

1. venue tables and Gower ranges from the base-training seasons;
2. base model tuned and fit on base-training seasons, predicting the rest;
3. out-of-fold base xG for the base-training seasons;
4. skill features for the skill span from ledgers over every earlier game;
5. skill brackets from training-era cumulative goals / xG;
6. per bracket, a skill-adjusted model and a fresh baseline on identical
   shot sets, scored only on the held-out test seasons.

Every training artifact records which shots produced it (``provenance``)
so leakage can be audited after the fact.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .arena_adjust import AdjustmentTables, build_adjustment_tables
from .base_features import BASE_FEATURES, LABEL, build_base_features
from .ingest import ShotRecord, read_shots
from .learner import GbdtModel, GbdtParams, evaluate, feature_importance_gain, fit_gbdt, stratified_folds
from .learner.tuning import search
from .skill_features import SKILL_FEATURES, build_skill_features, compute_gower_ranges

logger = logging.getLogger(__name__)

BRACKETS = ("high", "mid", "low")
BRACKET_LABELS = {"high": "p > 0.75", "mid": "0.5 < p <= 0.75", "low": "p <= 0.5"}
MODELS = ("baseline", "skill_adjusted")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, config_hash: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed (config {config_hash[:12]}): {cause}")
        self.stage = stage
        self.config_hash = config_hash


def season_year(season) -> int:
    """Start year of a season id: 20212022 / "20212022" / 2021 -> 2021."""
    text = str(season).strip()
    return int(text[:4]) if len(text) == 8 else int(text)


def _season_list(value) -> list[int]:
    if isinstance(value, str):
        lo, _, hi = value.partition("-")
        lo, hi = int(lo), int(hi or lo)
        return list(range(lo, hi + 1))
    if isinstance(value, Mapping):
        return list(range(int(value["from"]), int(value["to"]) + 1))
    return sorted(season_year(v) for v in value)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    base_train: list = field(default_factory=lambda: list(range(2010, 2021)))
    skill_feature_span: list = field(default_factory=lambda: list(range(2012, 2023)))
    final_train: list = field(default_factory=lambda: list(range(2012, 2021)))
    test: list = field(default_factory=lambda: [2021, 2022])
    bracket_seasons: Optional[list] = None  # window for skill ratios; defaults to base_train
    k_folds: int = 5
    bracket_cuts: tuple = (0.5, 0.75)
    bracket_key: str = "shooter"
    min_shots: int = 20
    arena_min_sample: int = 200
    tuner_budget: int = 20
    tuner_folds: int = 5
    search_space: Any = None
    params: Optional[dict] = None  # fixed parameters; skips tuning when set
    seed: int = 0
    shots: list = field(default_factory=list)
    out_dir: Optional[str] = None

    def __post_init__(self):
        for name in ("base_train", "skill_feature_span", "final_train", "test"):
            setattr(self, name, _season_list(getattr(self, name)))
        self.bracket_seasons = list(self.base_train) if self.bracket_seasons is None else _season_list(self.bracket_seasons)
        self.bracket_cuts = tuple(float(c) for c in self.bracket_cuts)
        self.shots = [str(p) for p in ([self.shots] if isinstance(self.shots, (str, Path)) else self.shots)]

    def validate(self) -> None:
        test = set(self.test)
        if not test:
            raise ValueError("no test seasons configured")
        for name in ("base_train", "final_train", "bracket_seasons"):
            overlap = test & set(getattr(self, name))
            if overlap:
                raise ValueError(f"test seasons {sorted(overlap)} overlap {name}")
        covered = set(self.base_train) | test
        if not set(self.skill_feature_span) <= covered:
            raise ValueError("skill_feature_span extends beyond base-xG coverage")
        if not set(self.bracket_seasons) <= set(self.base_train):
            raise ValueError("bracket_seasons must lie inside base_train (they need out-of-fold xG)")
        if not set(self.final_train) <= set(self.skill_feature_span):
            raise ValueError("final_train must lie inside skill_feature_span")
        if not test <= set(self.skill_feature_span):
            raise ValueError("test seasons must lie inside skill_feature_span")
        lo, hi = self.bracket_cuts
        if not 0 < lo < hi < 1:
            raise ValueError("bracket_cuts must satisfy 0 < low < high < 1")
        if self.bracket_key not in ("shooter", "goalie"):
            raise ValueError("bracket_key must be 'shooter' or 'goalie'")
        if self.k_folds < 2 or self.tuner_folds < 2 or self.tuner_budget < 1:
            raise ValueError("k_folds, tuner_folds >= 2 and tuner_budget >= 1 required")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bracket_cuts"] = list(self.bracket_cuts)
        return d

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, d: Mapping) -> "PipelineConfig":
        d = dict(d.get("pipeline", d))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yaml", ".yml")):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        cfg = cls.from_mapping(data)
        base = Path(path).parent
        cfg.shots = [str(p if Path(p).is_absolute() else base / p) for p in cfg.shots]
        if cfg.out_dir and not Path(cfg.out_dir).is_absolute():
            cfg.out_dir = str(base / cfg.out_dir)
        return cfg


# ---------------------------------------------------------------------------
# out-of-fold predictions


def _take(rows, idx):
    return rows.iloc[idx] if isinstance(rows, pd.DataFrame) else np.asarray(rows)[idx]


def cross_val_predict(
    rows,
    labels,
    params: GbdtParams,
    k: int = 5,
    seed: int = 0,
    stratify: bool = True,
    audit: Optional[list] = None,
) -> np.ndarray:
    """Out-of-fold probabilities: each row is scored by the model that excluded its fold.

    With ``audit`` (a list) one ``(row, fold, trained_folds)`` tuple is
    appended per row.
    """
    y = np.asarray(labels).ravel()
    n = y.size
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError("fewer rows than folds")
    if stratify:
        folds = stratified_folds(y, k, seed)
    else:
        folds = np.random.default_rng(seed).permutation(n) % k
    oof = np.full(n, np.nan)
    for f in range(k):
        test_idx = np.flatnonzero(folds == f)
        train_idx = np.flatnonzero(folds != f)
        if test_idx.size == 0:
            continue
        if np.unique(y[train_idx]).size < 2:
            raise ValueError(f"training folds for fold {f} hold a single class; use stratify=True or fewer folds")
        model = fit_gbdt(_take(rows, train_idx), y[train_idx], params)
        oof[test_idx] = model.predict_proba(_take(rows, test_idx))
        if audit is not None:
            trained = frozenset(int(g) for g in np.unique(folds[train_idx]))
            audit.extend((int(i), f, trained) for i in test_idx)
    return oof


# ---------------------------------------------------------------------------
# skill brackets


@dataclass
class BracketAssignment:
    key: str
    cuts: tuple
    ratios: dict  # player -> skill ratio (1.0 when under-sampled)
    qualifying: dict  # player -> ratio, players ranked for percentiles
    percentiles: dict = field(default_factory=dict)

    def percentile(self, ratio: float) -> float:
        values = np.array(sorted(self.qualifying.values()))
        uniq, inverse = np.unique(values, return_inverse=True)
        if uniq.size == 1:
            return 0.5
        ranks = np.arange(values.size, dtype=float)
        mean_rank = np.bincount(inverse, weights=ranks) / np.bincount(inverse)
        return float(np.interp(ratio, uniq, mean_rank / (values.size - 1)))

    def bracket_of_percentile(self, p: float) -> str:
        lo, hi = self.cuts
        if p <= lo:
            return "low"
        return "mid" if p <= hi else "high"

    def bracket(self, player_id) -> str:
        if player_id not in self.percentiles:
            self.percentiles[player_id] = self.percentile(self.ratios.get(player_id, 1.0))
        return self.bracket_of_percentile(self.percentiles[player_id])

    def assign(self, frame: pd.DataFrame) -> pd.Series:
        col = "shooter_id" if self.key == "shooter" else "goalie_id"
        return frame[col].map(self.bracket)


def assign_brackets(
    frame: pd.DataFrame,
    xg_col: str = "xg",
    key: str = "shooter",
    min_shots: int = 20,
    cuts: Sequence[float] = (0.5, 0.75),
) -> BracketAssignment:
    """Skill ratios from unweighted cumulative sums over ``frame`` (the training era).

    Shooters: goals / xG. Goalies: xG against / goals against. Players with
    fewer than ``min_shots`` shots or a zero denominator get ratio 1.0 and
    do not enter the percentile ranking.
    """
    col = "shooter_id" if key == "shooter" else "goalie_id"
    grouped = frame.groupby(col, sort=True).agg(n=(LABEL, "size"), goals=(LABEL, "sum"), xg=(xg_col, "sum"))
    ratios, qualifying = {}, {}
    for player, row in grouped.iterrows():
        num, den = (row.goals, row.xg) if key == "shooter" else (row.xg, row.goals)
        if row.n < min_shots or den == 0:
            ratios[player] = 1.0
            continue
        ratios[player] = qualifying[player] = float(num / den)
    if not qualifying:
        raise ValueError("no player qualifies for percentile ranking")
    out = BracketAssignment(key, tuple(cuts), ratios, qualifying)
    for player in ratios:
        out.bracket(player)
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    metrics: dict  # bracket -> model -> MetricsBundle as dict
    importances: dict  # bracket -> model -> feature -> normalized gain
    metadata: dict

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "importances": self.importances, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(d["metrics"], d["importances"], d["metadata"])


def _brackets_in(report: EvalReport) -> list[str]:
    return [b for b in BRACKETS if b in report.metrics] + sorted(set(report.metrics) - set(BRACKETS))


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write metrics.csv, importance_<bracket>.csv and report.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    brackets = _brackets_in(report)
    written = []

    path = out / "metrics.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "bracket", "percentile", "log_loss", "auc", "brier"])
        for model in MODELS:
            for b in brackets:
                m = report.metrics[b][model]
                w.writerow([model, b, BRACKET_LABELS.get(b, b)] + [f"{m[k]:.4f}" for k in ("log_loss", "auc", "brier")])
    written.append(path)

    for b in brackets:
        path = out / f"importance_{b}.csv"
        tables = report.importances.get(b, {})
        models = [m for m in ("skill_adjusted", "baseline") if m in tables]
        features = sorted({f for m in models for f in tables[m]})
        lead = tables[models[0]] if models else {}
        features.sort(key=lambda f: (-lead.get(f, 0.0), f))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature"] + models)
            for f in features:
                w.writerow([f] + [repr(float(tables[m].get(f, 0.0))) for m in models])
        written.append(path)

    path = out / "report.json"
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class PipelineResult:
    report: EvalReport
    tables: AdjustmentTables
    gower_ranges: dict
    brackets: BracketAssignment
    frame: pd.DataFrame  # base features + xg + bracket for every shot
    skill: pd.DataFrame
    models: dict  # name -> GbdtModel
    params: dict  # name -> GbdtParams
    oof_audit: list
    provenance: dict  # artifact -> set of shot ids it consumed


def _fit_tuned(name, rows, labels, config: PipelineConfig, seed: int, params_out: dict, log_prov, ids):
    if config.params is not None:
        params = dataclasses.replace(GbdtParams(seed=seed), **config.params)
    else:
        result = search(rows, labels, config.search_space, config.tuner_budget, config.tuner_folds, seed)
        params = result.best
        log_prov(f"tuner:{name}", ids)
    params_out[name] = params
    model = fit_gbdt(rows, labels, params)
    log_prov(f"model:{name}", ids)
    return model


def run_pipeline(config: PipelineConfig, shots: Optional[Sequence[ShotRecord]] = None) -> PipelineResult:
    config.validate()
    chash = config.hash
    stage = "load"
    provenance: dict[str, set] = {}

    def log_prov(artifact, ids):
        provenance.setdefault(artifact, set()).update(ids)

    try:
        if shots is None:
            shots = [s for path in config.shots for s in read_shots(path)]
        wanted = set(config.base_train) | set(config.skill_feature_span) | set(config.test)
        shots = [s for s in shots if season_year(s.season) in wanted]
        if not shots:
            raise ValueError("no shots in the configured seasons")
        base_train = set(config.base_train)

        stage = "arena_tables"
        train_shots = [s for s in shots if season_year(s.season) in base_train]
        tables = build_adjustment_tables(train_shots, config.arena_min_sample)
        log_prov("arena_tables", (s.shot_id for s in train_shots))

        stage = "base_features"
        frame = build_base_features(shots, tables)
        year = frame["season"].map(season_year)
        in_bt = year.isin(base_train).to_numpy()
        ids = frame["shot_id"].to_numpy()
        y = frame[LABEL].to_numpy()
        X = frame[BASE_FEATURES]

        stage = "base_model"
        params: dict = {}
        models: dict = {}
        models["base"] = _fit_tuned("base", X[in_bt], y[in_bt], config, config.seed, params, log_prov, ids[in_bt])
        xg = np.full(len(frame), np.nan)
        if (~in_bt).any():
            xg[~in_bt] = models["base"].predict_proba(X[~in_bt])

        stage = "oof_xg"
        audit: list = []
        xg[in_bt] = cross_val_predict(
            X[in_bt], y[in_bt], params["base"], config.k_folds, config.seed + 1, audit=audit
        )
        log_prov("oof_xg", ids[in_bt])
        frame["xg"] = xg

        stage = "gower_ranges"
        ranges = compute_gower_ranges(frame[in_bt])
        log_prov("gower_ranges", ids[in_bt])

        stage = "skill_features"
        in_span = year.isin(set(config.skill_feature_span)).to_numpy()
        skill = build_skill_features(frame, ranges, "xg", target=in_span)
        skill = skill.set_index("shot_id").reindex(frame["shot_id"][in_span]).reset_index()

        stage = "brackets"
        in_br = year.isin(set(config.bracket_seasons)).to_numpy()
        brackets = assign_brackets(frame[in_br], "xg", config.bracket_key, config.min_shots, config.bracket_cuts)
        log_prov("brackets", ids[in_br])
        frame["bracket"] = brackets.assign(frame)

        stage = "bracket_models"
        skill_idx = skill.set_index("shot_id")
        in_ft = year.isin(set(config.final_train)).to_numpy()
        in_test = year.isin(set(config.test)).to_numpy()
        metrics, importances, counts = {}, {}, {}
        for i, b in enumerate(BRACKETS):
            in_b = (frame["bracket"] == b).to_numpy()
            tr, te = in_ft & in_b, in_test & in_b
            if not tr.any() or not te.any():
                logger.warning("bracket %s has no training or test shots; skipped", b)
                continue
            tr_ids, te_ids = ids[tr], ids[te]
            seed = config.seed + 100 * (i + 1)
            sk_tr = skill_idx.loc[tr_ids, SKILL_FEATURES]
            sk_te = skill_idx.loc[te_ids, SKILL_FEATURES]
            models[f"skill_{b}"] = _fit_tuned(f"skill_{b}", sk_tr, y[tr], config, seed, params, log_prov, tr_ids)
            models[f"baseline_{b}"] = _fit_tuned(f"baseline_{b}", X[tr], y[tr], config, seed + 1, params, log_prov, tr_ids)
            p_skill = models[f"skill_{b}"].predict_proba(sk_te)
            p_base = models[f"baseline_{b}"].predict_proba(X[te])
            metrics[b] = {
                "baseline": evaluate(p_base, y[te]).to_dict(),
                "skill_adjusted": evaluate(p_skill, y[te]).to_dict(),
            }
            importances[b] = {
                "baseline": feature_importance_gain(models[f"baseline_{b}"]),
                "skill_adjusted": feature_importance_gain(models[f"skill_{b}"]),
            }
            counts[b] = {"train": int(tr.sum()), "test": int(te.sum())}
        if not metrics:
            raise ValueError("no bracket had both training and test shots")

        stage = "report"
        metadata = {
            "config_hash": chash,
            "seed": config.seed,
            "row_counts": {
                "shots": int(len(frame)),
                "base_train": int(in_bt.sum()),
                "skill_rows": int(in_span.sum()),
                "final_train": int(in_ft.sum()),
                "test": int(in_test.sum()),
                "brackets": counts,
            },
            "params": {name: p.to_dict() for name, p in sorted(params.items())},
            "provenance_seasons": {
                art: sorted(int(v) for v in year[frame["shot_id"].isin(used)].unique())
                for art, used in sorted(provenance.items())
            },
            "bracket_key": config.bracket_key,
        }
        report = EvalReport(metrics, importances, metadata)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, chash, exc) from exc
    return PipelineResult(report, tables, ranges, brackets, frame, skill, models, params, audit, provenance)


def run_stacked_pipeline(config: PipelineConfig, shots: Optional[Sequence[ShotRecord]] = None) -> EvalReport:
    return run_pipeline(config, shots).report
