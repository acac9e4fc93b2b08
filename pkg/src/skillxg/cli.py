"""Command-line entry point: ``xg <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .arena_adjust import AdjustmentTables, adjust_shot, build_adjustment_tables
from .base_features import LABEL, META_COLUMNS, build_base_features
from .ingest import clean_and_filter, load_direction_table, parse_pbp, read_shots, write_direction_table, write_events, write_shots
from .learner import GbdtModel, GbdtParams, evaluate, fit_gbdt, tune
from .pipeline import EvalReport, PipelineConfig, emit_report, run_pipeline
from .skill_features import build_skill_features, compute_gower_ranges

logger = logging.getLogger("skillxg")


def read_table(path) -> pd.DataFrame:
    path = str(path)
    if ".csv" in Path(path).suffixes:
        return pd.read_csv(path, dtype={"shot_id": str, "game_id": str, "season": str, "shooter_id": str, "goalie_id": str})
    return pd.read_json(path, lines=True, dtype={"shot_id": str, "game_id": str, "season": str})


def write_table(frame: pd.DataFrame, path) -> None:
    path = str(path)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if ".csv" in Path(path).suffixes:
        frame.to_csv(path, index=False, lineterminator="\n")
    else:
        frame.to_json(path, orient="records", lines=True, double_precision=15)


def _feature_columns(frame: pd.DataFrame, label: str, features) -> list[str]:
    if features:
        return [c.strip() for c in features.split(",")]
    skip = set(META_COLUMNS) | {label, "xg", "bracket"}
    return [c for c in frame.columns if c not in skip]


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    events = [e for path in args.input for e in parse_pbp(path, on_error=args.on_error)]
    directions = load_direction_table(args.direction_table)
    shots = clean_and_filter(events, directions)
    write_shots(shots, args.out, args.format)
    print(f"{len(shots)} shots from {len(events)} events -> {args.out}")
    return 0


def cmd_adjust(args) -> int:
    shots = read_shots(args.shots)
    if args.tables:
        tables = AdjustmentTables.from_json(Path(args.tables).read_text(encoding="utf-8"))
    else:
        tables = build_adjustment_tables(shots, args.min_sample)
    rows = [{"shot_id": s.shot_id, "arena_id": s.arena_id, "x_std": s.x_std, "y_std": s.y_std, **adjust_shot(s, tables)} for s in shots]
    write_table(pd.DataFrame(rows), args.out)
    if args.tables_out:
        Path(args.tables_out).write_text(tables.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_features_base(args) -> int:
    shots = read_shots(args.shots)
    tables = AdjustmentTables.from_json(Path(args.adjust_tables).read_text(encoding="utf-8"))
    write_table(build_base_features(shots, tables), args.out)
    return 0


def cmd_features_skill(args) -> int:
    frame = read_table(args.base_rows)
    xg = read_table(args.xg)[["shot_id", "xg"]]
    frame = frame.merge(xg, on="shot_id", how="left", validate="one_to_one")
    if frame["xg"].isna().any():
        raise SystemExit(f"{int(frame['xg'].isna().sum())} shots have no xg value")
    if args.ranges and Path(args.ranges).exists():
        ranges = json.loads(Path(args.ranges).read_text(encoding="utf-8"))
    else:
        ranges = compute_gower_ranges(frame)
        if args.ranges:
            Path(args.ranges).write_text(json.dumps(ranges, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    write_table(build_skill_features(frame, ranges, "xg"), args.out)
    return 0


def cmd_train(args) -> int:
    frame = read_table(args.rows)
    cols = _feature_columns(frame, args.labels_col, args.features)
    labels = frame[args.labels_col].to_numpy()
    if args.tune:
        space = json.loads(Path(args.space).read_text(encoding="utf-8")) if args.space else None
        params = tune(frame[cols], labels, space, args.budget, args.folds, args.seed)
    elif args.params:
        params = GbdtParams.from_dict(json.loads(Path(args.params).read_text(encoding="utf-8")))
    else:
        params = GbdtParams(seed=args.seed)
    model = fit_gbdt(frame[cols], labels, params)
    model.save(args.out)
    print(f"trained {len(model.trees)} trees on {len(frame)} rows x {len(cols)} features -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = GbdtModel.load(args.model)
    frame = read_table(args.rows)
    out = pd.DataFrame({"xg": model.predict_proba(frame)})
    if "shot_id" in frame:
        out.insert(0, "shot_id", frame["shot_id"].to_numpy())
    write_table(out, args.out)
    return 0


def cmd_evaluate(args) -> int:
    model = GbdtModel.load(args.model)
    frame = read_table(args.rows)
    metrics = evaluate(model.predict_proba(frame), frame[args.labels_col].to_numpy())
    print(json.dumps(metrics.to_dict(), sort_keys=True, indent=2))
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.load(args.config)
    out_dir = Path(args.out or config.out_dir or "report")
    if not config.shots:
        raise SystemExit("config lists no shot files")
    result = run_pipeline(config)
    files = emit_report(result.report, out_dir)
    manifest = {
        "config_hash": config.hash,
        "config": config.to_dict(),
        "files": sorted(p.name for p in files),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for b, m in result.report.metrics.items():
        print(b, " ".join(f"{name}: ll={v['log_loss']:.4f} auc={v['auc']:.4f} brier={v['brier']:.4f}" for name, v in m.items()))
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    report = EvalReport.from_dict(json.loads((src / "report.json").read_text(encoding="utf-8")))
    emit_report(report, Path(args.out) if args.out else src)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import generate_corpus

    corpus = generate_corpus(
        args.seed,
        first_season=args.first_season,
        n_seasons=args.seasons,
        games_per_season=args.games_per_season,
        skaters_per_team=args.skaters_per_team,
    )
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_events(corpus.events, Path(args.out) / "events.jsonl")
    write_direction_table(corpus.directions, Path(args.out) / "directions.csv")
    truth = {"shooter": corpus.shooter_log_mult, "goalie": corpus.goalie_log_mult, "arena_bias": corpus.arena_bias}
    (Path(args.out) / "truth.json").write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"{len(corpus.events)} events in {len(corpus.seasons)} seasons -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xg", description="Skill-adjusted expected-goals pipeline")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse raw play-by-play into cleaned shots")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--direction-table", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["jsonl", "csv"])
    s.add_argument("--on-error", choices=["skip", "abort"], default="abort")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("adjust", help="build venue tables and adjusted coordinates")
    s.add_argument("--shots", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tables-out")
    s.add_argument("--tables", help="reuse existing tables instead of building them")
    s.add_argument("--min-sample", type=int, default=200)
    s.set_defaults(func=cmd_adjust)

    feats = sub.add_parser("features", help="feature builders").add_subparsers(dest="kind", required=True)
    s = feats.add_parser("base")
    s.add_argument("--shots", required=True)
    s.add_argument("--adjust-tables", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features_base)
    s = feats.add_parser("skill")
    s.add_argument("--base-rows", required=True)
    s.add_argument("--xg", required=True, help="table with shot_id and xg columns")
    s.add_argument("--out", required=True)
    s.add_argument("--ranges", help="Gower ranges JSON; read if present, else computed and written")
    s.set_defaults(func=cmd_features_skill)

    s = sub.add_parser("train", help="fit a boosted-tree model")
    s.add_argument("--rows", required=True)
    s.add_argument("--labels-col", default=LABEL)
    s.add_argument("--features", help="comma-separated feature columns (default: all non-meta columns)")
    group = s.add_mutually_exclusive_group()
    group.add_argument("--params")
    group.add_argument("--tune", action="store_true")
    s.add_argument("--space", help="search-space JSON for --tune")
    s.add_argument("--budget", type=int, default=20)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="score rows with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--rows", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="log loss, AUC and Brier of a model on labelled rows")
    s.add_argument("--model", required=True)
    s.add_argument("--rows", required=True)
    s.add_argument("--labels-col", default=LABEL)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run", help="execute the full stacked pipeline")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="regenerate tables from report.json")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic planted-skill corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--first-season", type=int, default=2001)
    s.add_argument("--seasons", type=int, default=3)
    s.add_argument("--games-per-season", type=int, default=500)
    s.add_argument("--skaters-per-team", type=int, default=6)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
