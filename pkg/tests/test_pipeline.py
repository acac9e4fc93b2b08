import dataclasses
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from skillxg.base_features import BASE_FEATURES
from skillxg.cli import main
from skillxg.learner import GbdtParams
from skillxg.pipeline import (
    EvalReport,
    PipelineConfig,
    PipelineError,
    assign_brackets,
    cross_val_predict,
    emit_report,
    run_pipeline,
    season_year,
)

GOLDEN = Path(__file__).parent / "golden" / "report"
FAST = {"n_estimators": 25, "learning_rate": 0.1, "max_depth": 3, "num_leaves": 6, "min_data_in_leaf": 40}
TINY_SPACE = {"learning_rate": {"choice": [0.05, 0.1]}, "max_depth": 3, "num_leaves": 6, "min_data_in_leaf": 40, "n_estimators": 60, "early_stopping_rounds": 5}


def fixture_config(**kw):
    base = dict(
        base_train=[2001, 2002], skill_feature_span=[2001, 2002, 2003], final_train=[2001, 2002], test=[2003],
        arena_min_sample=50, min_shots=10, k_folds=3, params=FAST, seed=3,
    )  # fmt: skip
    base.update(kw)
    return PipelineConfig(**base)


# config -----------------------------------------------------------------------


def test_overlapping_seasons_fail_validation():
    with pytest.raises(ValueError, match="overlap"):
        fixture_config(final_train=[2002, 2003]).validate()
    with pytest.raises(ValueError, match="overlap"):
        fixture_config(base_train=[2001, 2003]).validate()


def test_run_refuses_bad_config_before_training():
    with pytest.raises(ValueError, match="overlap"):
        run_pipeline(fixture_config(final_train=[2002, 2003]), shots=[])


def test_config_ranges_and_unknown_keys(tmp_path):
    cfg = PipelineConfig.from_mapping({"base_train": "2010-2020", "test": {"from": 2021, "to": 2022}})
    assert cfg.base_train == list(range(2010, 2021)) and cfg.test == [2021, 2022]
    cfg.validate()
    with pytest.raises(ValueError, match="unknown"):
        PipelineConfig.from_mapping({"base_trian": [2010]})
    path = tmp_path / "c.yaml"
    path.write_text("pipeline:\n  shots: [data/s.jsonl]\n  seed: 4\n")
    loaded = PipelineConfig.load(path)
    assert loaded.shots == [str(tmp_path / "data" / "s.jsonl")] and loaded.seed == 4
    assert loaded.hash == PipelineConfig.load(path).hash != PipelineConfig().hash


def test_season_year():
    assert season_year("20212022") == season_year(20212022) == season_year(2021) == 2021


# out-of-fold -----------------------------------------------------------------------


def test_leave_one_out_bookkeeping():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 2))
    y = np.array([0, 1] * 5)
    audit = []
    oof = cross_val_predict(X, y, GbdtParams(n_estimators=3, min_data_in_leaf=1), k=10, seed=1, audit=audit)
    assert np.isfinite(oof).all()
    assert sorted(r for r, _, _ in audit) == list(range(10))
    assert len({f for _, f, _ in audit}) == 10
    for _, fold, trained in audit:
        assert fold not in trained and len(trained) == 9


def test_fold_disjointness_audit():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 3))
    y = (rng.random(300) < 0.2).astype(int)
    audit = []
    cross_val_predict(X, y, GbdtParams(n_estimators=5), k=5, seed=0, audit=audit)
    assert len(audit) == 300
    assert all(fold not in trained and trained == frozenset(range(5)) - {fold} for _, fold, trained in audit)


def test_constant_features_give_training_fold_rates():
    y = np.array([1] * 20 + [0] * 80)
    audit = []
    oof = cross_val_predict(np.zeros((100, 1)), y, GbdtParams(n_estimators=5), k=4, seed=0, audit=audit)
    folds = np.empty(100, int)
    for r, f, _ in audit:
        folds[r] = f
    for f in range(4):
        assert np.allclose(oof[folds == f], y[folds != f].mean(), atol=1e-12)


def test_single_class_fold_error_suggests_stratification():
    y = np.array([1] + [0] * 9)
    with pytest.raises(ValueError, match="stratify"):
        cross_val_predict(np.zeros((10, 1)), y, GbdtParams(n_estimators=2), k=10, seed=0, stratify=False)


# brackets -----------------------------------------------------------------------


def _bracket_frame(spec):
    rows = []
    for player, (n, goals, xg_total) in spec.items():
        for i in range(n):
            rows.append({"shooter_id": player, "goalie_id": "G", "Outcome": int(i < goals), "xg": xg_total / n})
    return pd.DataFrame(rows)


def test_league_average_ratio():
    out = assign_brackets(_bracket_frame({"A": (100, 10, 10.0)}), min_shots=20)
    assert out.ratios["A"] == pytest.approx(1.0)
    assert out.percentiles["A"] == 0.5


def test_three_shooters_percentiles():
    frame = _bracket_frame({"lo": (40, 2, 4.0), "med": (40, 4, 4.0), "hi": (40, 8, 4.0)})
    out = assign_brackets(frame, min_shots=20)
    assert out.ratios == pytest.approx({"lo": 0.5, "med": 1.0, "hi": 2.0})
    assert out.percentiles == {"hi": 1.0, "lo": 0.0, "med": 0.5}
    assert [out.bracket(p) for p in ("lo", "med", "hi")] == ["low", "low", "high"]
    assert out.assign(frame).value_counts().to_dict() == {"low": 80, "high": 40}


def test_under_sampled_shooter_pinned_to_one():
    frame = _bracket_frame({"few": (3, 3, 0.3), "a": (40, 2, 4.0), "b": (40, 8, 4.0), "c": (40, 5, 4.0)})
    out = assign_brackets(frame, min_shots=20)
    assert out.ratios["few"] == 1.0 and "few" not in out.qualifying
    assert out.bracket("few") == out.bracket_of_percentile(out.percentile(1.0))
    assert out.bracket("stranger") == out.bracket("few")


def test_goalie_key_and_errors():
    frame = _bracket_frame({"a": (40, 2, 4.0)})
    frame["goalie_id"] = ["g1"] * 20 + ["g2"] * 20
    out = assign_brackets(frame, key="goalie", min_shots=5)
    assert out.ratios["g1"] == pytest.approx(2.0 / 2) and out.ratios["g2"] == 1.0 and "g2" not in out.qualifying
    with pytest.raises(ValueError, match="no player"):
        assign_brackets(frame, min_shots=100)


def test_cut_rule():
    out = assign_brackets(_bracket_frame({"a": (40, 2, 4.0)}), min_shots=1)
    assert [out.bracket_of_percentile(p) for p in (0.0, 0.5, 0.50001, 0.75, 0.76, 1.0)] == ["low", "low", "mid", "mid", "high", "high"]


# report -----------------------------------------------------------------------


def golden_report():
    return EvalReport(
        metrics={
            "high": {
                "baseline": {"log_loss": 0.29871234, "auc": 0.70125, "brier": 0.08412},
                "skill_adjusted": {"log_loss": 0.28512, "auc": 0.734869, "brier": 0.08011},
            }
        },
        importances={
            "high": {
                "skill_adjusted": {"xg_base": 0.6, "true_gax_shooter": 0.25, "true_talent_goalie": 0.15},
                "baseline": {"Distance": 0.7, "Angle": 0.3},
            }
        },
        metadata={"config_hash": "abc123", "seed": 0},
    )


def test_single_bracket_report_shape(tmp_path):
    files = emit_report(golden_report(), tmp_path)
    assert sorted(p.name for p in files) == ["importance_high.csv", "metrics.csv", "report.json"]
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert metrics[["model", "bracket"]].values.tolist() == [["baseline", "high"], ["skill_adjusted", "high"]]
    imp = pd.read_csv(tmp_path / "importance_high.csv")
    for col in ("skill_adjusted", "baseline"):
        assert abs(imp[col].sum() - 1.0) <= 1e-9


def test_report_matches_golden(tmp_path):
    emit_report(golden_report(), tmp_path)
    for name in ("metrics.csv", "importance_high.csv", "report.json"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_report_round_trip(tmp_path):
    report = golden_report()
    emit_report(report, tmp_path)
    again = EvalReport.from_dict(json.loads((tmp_path / "report.json").read_text()))
    assert again.to_json() == report.to_json()


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(golden_report(), blocker / "sub")


# end to end ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_run(small_corpus):
    shots, _ = small_corpus
    return run_pipeline(fixture_config(), shots)


def test_report_structure(fixture_run):
    report = fixture_run.report
    assert set(report.metrics) <= {"high", "mid", "low"} and report.metrics
    for b, by_model in report.metrics.items():
        assert set(by_model) == {"baseline", "skill_adjusted"}
        for m in by_model.values():
            assert 0 <= m["auc"] <= 1 and m["log_loss"] > 0 and 0 <= m["brier"] <= 1
        assert set(report.importances[b]["skill_adjusted"]) == {"true_gax_shooter", "true_talent_shooter", "true_gsax_goalie", "true_talent_goalie", "xg_base"}
        assert set(report.importances[b]["baseline"]) == set(BASE_FEATURES)
    assert report.metadata["config_hash"] == fixture_config().hash


def test_brackets_partition_shots(fixture_run):
    frame = fixture_run.frame
    assert frame["bracket"].isin(["high", "mid", "low"]).all()
    counts = fixture_run.report.metadata["row_counts"]
    in_test = frame["season"].map(season_year) == 2003
    assert sum(c["test"] for c in counts["brackets"].values()) == in_test.sum()
    # shooters split by the cuts: about half the qualifying shooters are low
    pct = np.array(list(fixture_run.brackets.percentiles.values()))
    q = len(fixture_run.brackets.qualifying)
    assert abs((pct <= 0.5).sum() - q / 2) <= 1 + (len(pct) - q)


def test_oof_xg_for_training_seasons(fixture_run):
    frame = fixture_run.frame
    assert frame["xg"].between(0, 1, inclusive="neither").all()
    in_bt = frame["season"].map(season_year).isin([2001, 2002]).to_numpy()
    assert len(fixture_run.oof_audit) == in_bt.sum()
    assert all(fold not in trained for _, fold, trained in fixture_run.oof_audit)


def test_identical_rerun_is_byte_identical(small_corpus, fixture_run, tmp_path):
    again = run_pipeline(fixture_config(), small_corpus[0])
    emit_report(fixture_run.report, tmp_path / "a")
    emit_report(again.report, tmp_path / "b")
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_provenance_excludes_test_seasons(small_corpus):
    # tuned run so the tuner artifacts are audited too
    shots, _ = small_corpus
    cfg = fixture_config(params=None, search_space=TINY_SPACE, tuner_budget=2, tuner_folds=2)
    first = run_pipeline(cfg, shots)
    test_ids = {s.shot_id for s in shots if season_year(s.season) == 2003}
    training = [a for a in first.provenance if not a.startswith(("model:skill_", "model:baseline_", "tuner:skill_", "tuner:baseline_"))]
    assert {"arena_tables", "oof_xg", "gower_ranges", "brackets", "tuner:base", "model:base"} <= set(training)
    for artifact, used in first.provenance.items():
        assert not used & test_ids, artifact

    # scramble every test-season shot; nothing learned from training seasons may move
    rng = np.random.default_rng(0)
    perturbed = [
        dataclasses.replace(s, outcome=1 - s.outcome, x_std=float(rng.uniform(25, 89)), y_std=float(rng.uniform(-42, 42)))
        if s.shot_id in test_ids else s
        for s in shots
    ]  # fmt: skip
    second = run_pipeline(cfg, perturbed)
    assert second.tables.to_json() == first.tables.to_json()
    assert second.gower_ranges == first.gower_ranges
    assert second.brackets.ratios == first.brackets.ratios
    assert second.params == first.params
    for name in first.models:
        assert second.models[name].to_json() == first.models[name].to_json(), name
    in_bt = first.frame["season"].map(season_year) != 2003
    assert np.array_equal(first.frame.loc[in_bt, "xg"], second.frame.loc[in_bt, "xg"])


def test_stage_failure_names_stage(small_corpus):
    shots, _ = small_corpus
    cfg = fixture_config(min_shots=10**6)
    with pytest.raises(PipelineError) as err:
        run_pipeline(cfg, shots)
    assert err.value.stage == "brackets" and err.value.config_hash == cfg.hash


# cli -----------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    raw = tmp_path / "raw"
    assert main(["synth", "--out", str(raw), "--seed", "2", "--games-per-season", "40", "--seasons", "3"]) == 0
    shots = tmp_path / "shots.jsonl"
    assert main(["ingest", "--input", str(raw / "events.jsonl"), "--direction-table", str(raw / "directions.csv"), "--out", str(shots)]) == 0
    config = tmp_path / "config.json"
    cfg = fixture_config(shots=["shots.jsonl"], out_dir="report").to_dict()
    config.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(config)]) == 0
    out = tmp_path / "report"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == PipelineConfig.load(config).hash
    assert set(manifest["files"]) >= {"metrics.csv", "report.json"}
    assert main(["report", "--in", str(out), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()

    # the stage-by-stage commands
    tables, adjusted = tmp_path / "tables.json", tmp_path / "adjusted.csv"
    assert main(["adjust", "--shots", str(shots), "--out", str(adjusted), "--tables-out", str(tables), "--min-sample", "50"]) == 0
    base = tmp_path / "base.csv"
    assert main(["features", "base", "--shots", str(shots), "--adjust-tables", str(tables), "--out", str(base)]) == 0
    params = tmp_path / "params.json"
    params.write_text(json.dumps(FAST))
    model = tmp_path / "model.json"
    assert main(["train", "--rows", str(base), "--params", str(params), "--out", str(model)]) == 0
    xg = tmp_path / "xg.csv"
    assert main(["predict", "--model", str(model), "--rows", str(base), "--out", str(xg)]) == 0
    skill = tmp_path / "skill.csv"
    ranges = tmp_path / "ranges.json"
    assert main(["features", "skill", "--base-rows", str(base), "--xg", str(xg), "--out", str(skill), "--ranges", str(ranges)]) == 0
    assert len(pd.read_csv(skill)) == len(pd.read_csv(base)) and ranges.exists()
    capsys.readouterr()
    assert main(["evaluate", "--model", str(model), "--rows", str(base)]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"log_loss", "auc", "brier"}
