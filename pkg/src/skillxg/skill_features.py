"""Shooter and goaltender skill features built from prior-game shot ledgers.

Every statistic is computed three ways over a player's history:

total
    all earlier shots, linearly recency-weighted (oldest 1/n ... newest 1);
locational
    only earlier shots in the same zone bin, re-weighted 1/m ... 1 within
    that subsequence;
situational
    all earlier shots, recency weight times an inverse-normalized Gower
    similarity to the current shot.

The three are summed into the "true" above-expected and talent features.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .rink import BLUE_LINE_X, GOAL_LINE_X, HALF_WIDTH

GOWER_FEATURES = [
    "isStrongSide",
    "LastEvent",
    "ShotType",
    "SchuckersX",
    "SchuckersY",
    "SchuckersDist",
    "SchuckersAngle",
    "Rebound",
    "Fastbreak",
]
GOWER_NUMERIC = ["SchuckersX", "SchuckersY", "SchuckersDist", "SchuckersAngle"]
SKILL_FEATURES = ["true_gax_shooter", "true_talent_shooter", "true_gsax_goalie", "true_talent_goalie", "xg_base"]

_COL_WIDTH = (GOAL_LINE_X - BLUE_LINE_X) / 3
_ROW_HEIGHT = 2 * HALF_WIDTH / 3


class BinId(IntEnum):
    B1 = 1
    B2 = 2
    B3 = 3
    B4 = 4
    B5 = 5
    B6 = 6
    B7 = 7
    B8 = 8
    B9 = 9
    BelowGoalLine = 10


def bin_of(x_std: float, y_std: float) -> BinId:
    """Zone bin of an offensive-zone location.

    Nine equal cells tile blue line to goal line (columns, by x) and board to
    board (rows, by y); cell index is ``3*row + col + 1``. Interior boundaries
    belong to the higher cell, the outer edges are clamped in.
    """
    if x_std < BLUE_LINE_X:
        raise ValueError(f"x_std={x_std} is outside the offensive zone")
    if x_std > GOAL_LINE_X:
        return BinId.BelowGoalLine
    col = min(max(math.floor((x_std - BLUE_LINE_X) / _COL_WIDTH), 0), 2)
    row = min(max(math.floor((y_std + HALF_WIDTH) / _ROW_HEIGHT), 0), 2)
    return BinId(3 * row + col + 1)


def _bins(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if np.any(x < BLUE_LINE_X):
        raise ValueError("x_std below the blue line")
    col = np.clip(np.floor((x - BLUE_LINE_X) / _COL_WIDTH), 0, 2)
    row = np.clip(np.floor((y + HALF_WIDTH) / _ROW_HEIGHT), 0, 2)
    out = (3 * row + col + 1).astype(np.int64)
    out[x > GOAL_LINE_X] = int(BinId.BelowGoalLine)
    return out


def linear_weights(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=float) / n if n > 0 else np.empty(0)


def gower_distance(a: Mapping, b: Mapping, ranges: Mapping[str, float]) -> float:
    """Mean per-feature dissimilarity over the features both shots have.

    Features named in ``ranges`` are numeric (range-scaled absolute
    difference, capped at 1); the rest are matched for equality.
    """
    total = 0.0
    count = 0
    for name in GOWER_FEATURES:
        va, vb = a.get(name), b.get(name)
        if _is_missing(va) or _is_missing(vb):
            continue
        if name in ranges:
            if ranges[name] <= 0:
                raise ValueError(f"range for {name} must be positive")
            total += min(abs(float(va) - float(vb)) / ranges[name], 1.0)
        else:
            total += 0.0 if va == vb else 1.0
        count += 1
    if count == 0:
        raise ValueError("no feature present in both shots")
    return total / count


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def inverse_normalize(distances) -> np.ndarray:
    """Rescale distances to weights in [0, 1], closest -> 1 and farthest -> 0."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        return d
    lo, hi = d.min(), d.max()
    if hi == lo:
        return np.ones_like(d)
    return 1.0 - (d - lo) / (hi - lo)


def above_expected(xg, outcome, weights=None, role: str = "shooter") -> float:
    """Weighted goals minus weighted xG (shooter) or the reverse (goalie)."""
    xg = np.asarray(xg, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    if xg.size == 0:
        return 0.0
    w = np.ones_like(xg) if weights is None else np.asarray(weights, dtype=float)
    diff = float(np.dot(w, outcome) - np.dot(w, xg))
    return diff if role == "shooter" else -diff


def talent(xg, outcome, weights=None, role: str = "shooter") -> float:
    """Weighted goals over weighted xG (shooter) or xG over goals (goalie); 0 when undefined."""
    xg = np.asarray(xg, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    if xg.size == 0:
        return 0.0
    w = np.ones_like(xg) if weights is None else np.asarray(weights, dtype=float)
    goals, expected = float(np.dot(w, outcome)), float(np.dot(w, xg))
    num, den = (goals, expected) if role == "shooter" else (expected, goals)
    return num / den if den != 0 else 0.0


# ---------------------------------------------------------------------------
# ledgers


@dataclass(frozen=True)
class LedgerEntry:
    game_date: dt.date
    game_id: str
    event_index: int
    xg: float
    outcome: int
    bin: BinId
    gower: Mapping

    @property
    def key(self):
        return (self.game_date, self.game_id, self.event_index)


@dataclass
class SkillLedger:
    player_id: str
    role: str
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for prev, cur in zip(self.entries, self.entries[1:]):
            if not prev.key < cur.key:
                raise ValueError(f"ledger for {self.player_id} out of order at {cur.key}")

    def append(self, entry: LedgerEntry) -> None:
        if self.entries and not self.entries[-1].key < entry.key:
            raise ValueError(f"ledger for {self.player_id} out of order at {entry.key}")
        self.entries.append(entry)

    def before_game(self, game_date, game_id) -> list:
        return [e for e in self.entries if (e.game_date, e.game_id) < (game_date, game_id)]


@dataclass
class GowerEncoder:
    """Maps Gower subsets onto float matrices (categoricals as codes, NaN missing)."""

    ranges: Mapping[str, float]
    vocab: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in GOWER_NUMERIC:
            if self.ranges.get(name, 0) <= 0:
                raise ValueError(f"range for {name} must be positive")

    def _code(self, name, value) -> float:
        if _is_missing(value):
            return np.nan
        if name in GOWER_NUMERIC:
            return float(value)
        table = self.vocab.setdefault(name, {})
        return float(table.setdefault(value, len(table)))

    def encode_rows(self, rows: Iterable[Mapping]) -> np.ndarray:
        data = [[self._code(n, r.get(n)) for n in GOWER_FEATURES] for r in rows]
        return np.asarray(data, dtype=float).reshape(-1, len(GOWER_FEATURES))

    def encode_frame(self, frame: pd.DataFrame) -> np.ndarray:
        cols = []
        for name in GOWER_FEATURES:
            values = frame[name]
            if name in GOWER_NUMERIC:
                cols.append(values.to_numpy(dtype=float))
            else:
                cols.append(np.array([self._code(name, v) for v in values], dtype=float))
        return np.column_stack(cols) if cols else np.empty((len(frame), 0))

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.ranges[n] if n in GOWER_NUMERIC else np.nan for n in GOWER_FEATURES])


def gower_matrix(queries: np.ndarray, ledger: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Pairwise Gower distances, shape (len(queries), len(ledger))."""
    q, n = queries.shape[0], ledger.shape[0]
    total = np.zeros((q, n))
    count = np.zeros((q, n))
    for j in range(queries.shape[1]):
        a = queries[:, j][:, None]
        b = ledger[:, j][None, :]
        present = ~(np.isnan(a) | np.isnan(b))
        if np.isnan(scale[j]):
            d = (a != b).astype(float)
        else:
            d = np.minimum(np.abs(a - b) / scale[j], 1.0)
        total = total + np.where(present, d, 0.0)
        count = count + present
    if n and np.any(count == 0):
        raise ValueError("no feature present in both shots")
    with np.errstate(invalid="ignore"):
        return total / count


def _components(xg, outcome, bins, gower_rows, query_bins, query_gower, scale) -> np.ndarray:
    """Above-expected and talent (shooter orientation) per component, per query.

    Returns (q, 3, 2): component axis is total/locational/situational, last
    axis is (weighted goals, weighted xG).
    """
    q = query_bins.shape[0]
    n = xg.shape[0]
    out = np.zeros((q, 3, 2))
    if n == 0:
        return out
    w = linear_weights(n)
    out[:, 0, 0] = np.dot(w, outcome)
    out[:, 0, 1] = np.dot(w, xg)
    for b in np.unique(query_bins):
        sel = bins == b
        m = int(sel.sum())
        if m:
            wl = linear_weights(m)
            rows = query_bins == b
            out[rows, 1, 0] = np.dot(wl, outcome[sel])
            out[rows, 1, 1] = np.dot(wl, xg[sel])
    dist = gower_matrix(query_gower, gower_rows, scale)
    for i in range(q):
        ws = inverse_normalize(dist[i]) * w
        out[i, 2, 0] = np.dot(ws, outcome)
        out[i, 2, 1] = np.dot(ws, xg)
    return out


def _finish(sums: np.ndarray, role: str) -> tuple[np.ndarray, np.ndarray]:
    goals, expected = sums[..., 0], sums[..., 1]
    if role == "shooter":
        ae, num, den = goals - expected, goals, expected
    else:
        ae, num, den = expected - goals, expected, goals
    safe = np.where(den != 0, den, 1.0)
    tal = np.where(den != 0, num / safe, 0.0)
    return ae.sum(axis=-1), tal.sum(axis=-1)


def build_skill_row(shot: Mapping, shooter_ledger: SkillLedger, goalie_ledger: SkillLedger, ranges: Mapping[str, float]) -> dict:
    """Table-4 skill features for one shot.

    ``shot`` needs game_date, game_id, x, y, xg_base, Outcome and the Gower
    subset. Ledger entries from the shot's own game or later are ignored.
    """
    encoder = GowerEncoder(ranges)
    scale = encoder.scale
    qbin = np.array([int(bin_of(shot["x"], shot["y"]))])
    date = shot["game_date"]
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    result = {}
    for ledger, role, ae_name, tal_name in (
        (shooter_ledger, "shooter", "true_gax_shooter", "true_talent_shooter"),
        (goalie_ledger, "goalie", "true_gsax_goalie", "true_talent_goalie"),
    ):
        ledger.validate()
        prior = ledger.before_game(date, shot["game_id"])
        qg = encoder.encode_rows([shot])
        lg = encoder.encode_rows([e.gower for e in prior])
        sums = _components(
            np.array([e.xg for e in prior], dtype=float),
            np.array([e.outcome for e in prior], dtype=float),
            np.array([int(e.bin) for e in prior], dtype=np.int64),
            lg,
            qbin,
            qg,
            scale,
        )
        ae, tal = _finish(sums, role)
        result[ae_name] = float(ae[0])
        result[tal_name] = float(tal[0])
    result["xg_base"] = float(shot["xg_base"])
    result["Outcome"] = int(shot["Outcome"])
    return result


def compute_gower_ranges(frame: pd.DataFrame) -> dict[str, float]:
    """Global numeric ranges for the Gower subset; zero-width ranges become 1."""
    ranges = {}
    for name in GOWER_NUMERIC:
        values = frame[name].to_numpy(dtype=float)
        width = float(np.nanmax(values) - np.nanmin(values)) if values.size else 0.0
        ranges[name] = width if width > 0 else 1.0
    return ranges


def build_skill_features(
    frame: pd.DataFrame,
    ranges: Mapping[str, float],
    xg_col: str = "xg",
    target: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """Skill rows for every shot in ``frame`` (or the ``target`` mask).

    ``frame`` holds base-feature rows plus ``xg_col``; all its shots feed
    the ledgers, in (game_date, game_id, event_index) order.
    """
    order = frame.sort_values(["game_date", "game_id", "event_index"], kind="mergesort").index
    df = frame.loc[order].reset_index(drop=True)
    if target is None:
        mask = np.ones(len(df), bool)
    else:
        mask = pd.Series(np.asarray(target, bool), index=frame.index).loc[order].to_numpy()
    games = pd.MultiIndex.from_frame(df[["game_date", "game_id"]])
    game_seq = pd.factorize(games, sort=True)[0]
    encoder = GowerEncoder(ranges)
    gower_rows = encoder.encode_frame(df)
    scale = encoder.scale
    xg = df[xg_col].to_numpy(dtype=float)
    outcome = df["Outcome"].to_numpy(dtype=float)
    bins = _bins(df["x"].to_numpy(dtype=float), df["y"].to_numpy(dtype=float))

    result = np.zeros((len(df), 4))
    for role, id_col, cols in (("shooter", "shooter_id", (0, 1)), ("goalie", "goalie_id", (2, 3))):
        for _, idx in df.groupby(id_col, sort=True).indices.items():
            idx = np.sort(idx)
            seq = game_seq[idx]
            for g in np.unique(seq[mask[idx]]):
                qi = idx[(seq == g) & mask[idx]]
                prior = idx[: np.searchsorted(seq, g, side="left")]
                sums = _components(xg[prior], outcome[prior], bins[prior], gower_rows[prior], bins[qi], gower_rows[qi], scale)
                ae, tal = _finish(sums, role)
                result[qi, cols[0]] = ae
                result[qi, cols[1]] = tal

    out = pd.DataFrame(result, columns=SKILL_FEATURES[:4])
    out.insert(0, "shot_id", df["shot_id"].to_numpy())
    out["xg_base"] = xg
    out["Outcome"] = df["Outcome"].to_numpy()
    return out[mask].reset_index(drop=True)
