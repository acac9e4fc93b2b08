"""Per-shot predictors for the base expected-goals model.

Column names match the published feature table exactly; see
:data:`BASE_FEATURES`. Numeric features that cannot be computed are NaN,
never zero; categorical gaps are the explicit ``"missing"`` category.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .arena_adjust import AdjustmentTables, adjust_shot
from .ingest import PrevEvent, ShotRecord
from .rink import BLUE_LINE_X, compute_geometry

__all__ = [
    "BASE_FEATURES",
    "CATEGORICAL_FEATURES",
    "META_COLUMNS",
    "compute_geometry",
    "is_strong_side",
    "compute_last_event_features",
    "detect_rebound_flurry",
    "detect_fastbreak",
    "assemble_base_row",
    "build_base_features",
]

BASE_FEATURES = [
    "isStrongSide",
    "x",
    "y",
    "GameTime",
    "PeriodTime",
    "Distance",
    "Angle",
    "ShotType",
    "GoalDiff",
    "LastEvent",
    "LastEventDistance",
    "LastEventZone",
    "LastEventAngle",
    "LastEventSpeed",
    "TimeSinceLastEvent",
    "Rebound",
    "FlurryCount",
    "Fastbreak",
    "krzywickiX",
    "krzywickiY",
    "krzywickiDist",
    "SchuckersX",
    "SchuckersY",
    "SchuckersDist",
    "SchuckersAngle",
]
CATEGORICAL_FEATURES = ["ShotType", "LastEvent", "LastEventZone"]
LABEL = "Outcome"
META_COLUMNS = ["shot_id", "season", "game_id", "game_date", "event_index", "team", "shooter_id", "goalie_id", "arena_id"]

MISSING = "missing"
REBOUND_WINDOW_S = 2.0
FASTBREAK_WINDOW_S = 4.0
NAN = float("nan")


def is_strong_side(handedness: Optional[str], y_std: float) -> Optional[bool]:
    """Left shots are strong-side with y > 0, right shots with y < 0; y == 0 counts for both."""
    if handedness is None:
        return None
    if y_std == 0:
        return True
    return (handedness == "L" and y_std > 0) or (handedness == "R" and y_std < 0)


def zone_of(x: float) -> str:
    if x >= BLUE_LINE_X:
        return "offensive"
    if x <= -BLUE_LINE_X:
        return "defensive"
    return "neutral"


def compute_last_event_features(shot, prev: Optional[PrevEvent]) -> dict:
    """LastEvent* and TimeSinceLastEvent for a shot given its preceding event."""
    if prev is None:
        return {
            "LastEvent": MISSING,
            "LastEventDistance": NAN,
            "LastEventZone": MISSING,
            "LastEventAngle": NAN,
            "LastEventSpeed": NAN,
            "TimeSinceLastEvent": NAN,
        }
    dt = shot.game_time_s - prev.game_time_s
    out = {
        "LastEvent": prev.event_type.value,
        "TimeSinceLastEvent": dt,
        "LastEventDistance": NAN,
        "LastEventZone": MISSING,
        "LastEventAngle": NAN,
        "LastEventSpeed": NAN,
    }
    if prev.x is None or prev.y is None:
        return out
    dist = math.hypot(shot.x_std - prev.x, shot.y_std - prev.y)
    out["LastEventDistance"] = dist
    out["LastEventZone"] = zone_of(prev.x)
    out["LastEventAngle"] = abs(compute_geometry(shot.x_std, shot.y_std)[1] - compute_geometry(prev.x, prev.y)[1])
    # 1 s floor keeps the speed finite for same-second events
    out["LastEventSpeed"] = dist / max(dt, 1.0)
    return out


def detect_rebound_flurry(shot, priors: Sequence) -> tuple[bool, int]:
    """Rebound flag and flurry chain length from earlier same-game on-goal shots.

    A shot is a rebound when the same team put a shot on goal at most two
    seconds earlier; its flurry count is one more than that earlier shot's.
    """
    chain = []  # (game_time, team, flurry) for priors, oldest first
    for p in priors:
        chain.append((p.game_time_s, p.team, _flurry_from(chain, p)))
    is_reb, count = _rebound_from(chain, shot)
    return is_reb, count


def _rebound_from(chain, shot) -> tuple[bool, int]:
    for t, team, flurry in reversed(chain):
        gap = shot.game_time_s - t
        if gap > REBOUND_WINDOW_S:
            break
        if team == shot.team and gap >= 0:
            return True, flurry + 1
    return False, 0


def _flurry_from(chain, shot) -> int:
    return _rebound_from(chain, shot)[1]


def detect_fastbreak(shot, prev: Optional[PrevEvent]) -> bool:
    """Shot within four seconds of an event outside the offensive zone."""
    if prev is None or prev.x is None:
        return False
    return zone_of(prev.x) != "offensive" and shot.game_time_s - prev.game_time_s <= FASTBREAK_WINDOW_S


def _flag(value: Optional[bool]) -> float:
    return NAN if value is None else float(value)


def assemble_base_row(shot: ShotRecord, prev: Optional[PrevEvent], rebound: tuple[bool, int], adjustments: dict) -> dict:
    distance, angle = compute_geometry(shot.x_std, shot.y_std)
    row = {
        "isStrongSide": _flag(is_strong_side(shot.shooter_handedness, shot.y_std)),
        "x": shot.x_std,
        "y": shot.y_std,
        "GameTime": shot.game_time_s,
        "PeriodTime": shot.period_time_s,
        "Distance": distance,
        "Angle": angle,
        "ShotType": shot.shot_type or MISSING,
        "GoalDiff": shot.goal_diff,
    }
    row.update(compute_last_event_features(shot, prev))
    row["Rebound"] = float(rebound[0])
    row["FlurryCount"] = rebound[1]
    row["Fastbreak"] = float(detect_fastbreak(shot, prev))
    row.update(adjustments)
    row[LABEL] = shot.outcome
    return {k: row[k] for k in BASE_FEATURES + [LABEL]}


def _meta(shot: ShotRecord) -> dict:
    return {
        "shot_id": shot.shot_id,
        "season": shot.season,
        "game_id": shot.game_id,
        "game_date": shot.game_date.isoformat(),
        "event_index": shot.event_index,
        "team": shot.team,
        "shooter_id": shot.shooter_id,
        "goalie_id": shot.goalie_id,
        "arena_id": shot.arena_id,
    }


def build_base_features(shots: Iterable[ShotRecord], tables: AdjustmentTables) -> pd.DataFrame:
    """One row per shot: identity columns, the base predictors, then Outcome."""
    by_game: dict[str, list[ShotRecord]] = {}
    for s in shots:
        by_game.setdefault(s.game_id, []).append(s)
    rows = []
    for game in by_game.values():
        game.sort(key=lambda s: s.event_index)
        chain: list = []
        for s in game:
            rebound = _rebound_from(chain, s)
            chain.append((s.game_time_s, s.team, rebound[1]))
            prev = s.prev_event()
            row = _meta(s)
            row.update(assemble_base_row(s, prev, rebound, adjust_shot(s, tables)))
            rows.append(row)
    frame = pd.DataFrame(rows, columns=META_COLUMNS + BASE_FEATURES + [LABEL])
    frame = frame.sort_values(["game_date", "game_id", "event_index"], kind="mergesort").reset_index(drop=True)
    frame["FlurryCount"] = frame["FlurryCount"].astype(np.int64)
    frame["GoalDiff"] = frame["GoalDiff"].astype(np.int64)
    frame[LABEL] = frame[LABEL].astype(np.int64)
    return frame
