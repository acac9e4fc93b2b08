"""Venue (scorekeeper) bias corrections for recorded shot locations.

Two corrections are provided:

* quantile mapping (Schuckers-Curro style): each arena's empirical CDF of
  x and y is mapped onto the league road-shot CDF, axis by axis;
* expected-distance subtraction (Krzywicki style): the arena's mean shot
  distance in excess of the league road mean is removed along the ray from
  the net through the shot.

Both tables are built from training seasons and then frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .rink import BLUE_LINE_X, BOARDS_X, GOAL_LINE_X, HALF_WIDTH, compute_geometry

logger = logging.getLogger(__name__)

MIN_SAMPLE = 200
MAX_KNOTS = 1001


@dataclass
class EmpiricalCdf:
    """Piecewise-linear CDF through mid-rank (Hazen) plotting positions.

    Tied values share one knot at their average plotting position, so a
    sample of identical values maps that value to 0.5.
    """

    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_sample(cls, sample, max_knots: int = MAX_KNOTS) -> "EmpiricalCdf":
        data = np.sort(np.asarray(sample, dtype=float))
        n = data.size
        if n == 0:
            raise ValueError("empty sample")
        positions = (np.arange(1, n + 1) - 0.5) / n
        values, inverse = np.unique(data, return_inverse=True)
        probs = np.bincount(inverse, weights=positions) / np.bincount(inverse)
        if values.size > max_knots:
            grid = np.linspace(probs[0], probs[-1], max_knots)
            values = np.interp(grid, probs, values)
            keep = np.concatenate([[True], np.diff(values) > 0])
            values, probs = values[keep], grid[keep]
        return cls(values, probs)

    def cdf(self, x):
        return np.interp(x, self.values, self.probs)

    def quantile(self, u):
        return np.interp(u, self.probs, self.values)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d) -> "EmpiricalCdf":
        return cls(np.asarray(d["values"], dtype=float), np.asarray(d["probs"], dtype=float))


@dataclass
class ArenaCdfTable:
    league_x: EmpiricalCdf
    league_y: EmpiricalCdf
    arenas: dict[str, tuple[EmpiricalCdf, EmpiricalCdf]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    min_sample: int = MIN_SAMPLE

    def to_dict(self) -> dict:
        return {
            "min_sample": self.min_sample,
            "league": {"x": self.league_x.to_dict(), "y": self.league_y.to_dict()},
            "arenas": {a: {"x": cx.to_dict(), "y": cy.to_dict()} for a, (cx, cy) in self.arenas.items()},
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, d) -> "ArenaCdfTable":
        return cls(
            league_x=EmpiricalCdf.from_dict(d["league"]["x"]),
            league_y=EmpiricalCdf.from_dict(d["league"]["y"]),
            arenas={
                a: (EmpiricalCdf.from_dict(v["x"]), EmpiricalCdf.from_dict(v["y"])) for a, v in d["arenas"].items()
            },
            counts={a: int(c) for a, c in d["counts"].items()},
            min_sample=int(d["min_sample"]),
        )


@dataclass
class ArenaMeanStats:
    league_road_mean: float
    arena_means: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    min_sample: int = MIN_SAMPLE

    def delta(self, arena_id) -> float:
        if arena_id not in self.arena_means or self.counts.get(arena_id, 0) < self.min_sample:
            return 0.0
        return self.arena_means[arena_id] - self.league_road_mean

    def to_dict(self) -> dict:
        return {
            "min_sample": self.min_sample,
            "league_road_mean": self.league_road_mean,
            "arena_means": dict(self.arena_means),
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, d) -> "ArenaMeanStats":
        return cls(
            league_road_mean=float(d["league_road_mean"]),
            arena_means={a: float(v) for a, v in d["arena_means"].items()},
            counts={a: int(c) for a, c in d["counts"].items()},
            min_sample=int(d["min_sample"]),
        )


def _group(shots) -> tuple[dict[str, list], list]:
    by_arena: dict[str, list] = {}
    road = []
    for s in shots:
        by_arena.setdefault(s.arena_id, []).append(s)
        if not s.is_home_shot:
            road.append(s)
    return by_arena, road


def build_cdf_tables(shots: Iterable, min_sample: int = MIN_SAMPLE) -> ArenaCdfTable:
    """Per-arena CDFs of x_std/y_std and league CDFs over road shots only.

    Arenas with fewer than ``min_sample`` shots are recorded by count only and
    get the identity adjustment.
    """
    shots = list(shots)
    if not shots:
        raise ValueError("no shots")
    by_arena, road = _group(shots)
    if not road:
        raise ValueError("no road shots to build the league reference")
    table = ArenaCdfTable(
        league_x=EmpiricalCdf.from_sample([s.x_std for s in road]),
        league_y=EmpiricalCdf.from_sample([s.y_std for s in road]),
        min_sample=min_sample,
    )
    for arena in sorted(by_arena):
        group = by_arena[arena]
        table.counts[arena] = len(group)
        if len(group) >= min_sample:
            table.arenas[arena] = (
                EmpiricalCdf.from_sample([s.x_std for s in group]),
                EmpiricalCdf.from_sample([s.y_std for s in group]),
            )
    return table


def quantile_map(x_std: float, y_std: float, arena_id, tables: ArenaCdfTable) -> tuple[float, float]:
    if arena_id not in tables.arenas:
        if arena_id not in tables.counts:
            logger.warning("arena %s not in CDF tables; location left unadjusted", arena_id)
        return x_std, y_std
    cx, cy = tables.arenas[arena_id]
    x_adj = float(tables.league_x.quantile(cx.cdf(x_std)))
    y_adj = float(tables.league_y.quantile(cy.cdf(y_std)))
    return min(max(x_adj, BLUE_LINE_X), BOARDS_X), min(max(y_adj, -HALF_WIDTH), HALF_WIDTH)


def schuckers_adjust(shot, tables: ArenaCdfTable) -> tuple[float, float, float, float]:
    """(SchuckersX, SchuckersY, SchuckersDist, SchuckersAngle) for one shot."""
    x_adj, y_adj = quantile_map(shot.x_std, shot.y_std, shot.arena_id, tables)
    dist, angle = compute_geometry(x_adj, y_adj)
    return x_adj, y_adj, dist, angle


def build_arena_stats(shots: Iterable, min_sample: int = MIN_SAMPLE) -> ArenaMeanStats:
    shots = list(shots)
    if not shots:
        raise ValueError("no shots")
    by_arena, road = _group(shots)
    if not road:
        raise ValueError("no road shots to build the league reference")
    league = float(np.mean([compute_geometry(s.x_std, s.y_std)[0] for s in road]))
    stats = ArenaMeanStats(league_road_mean=league, min_sample=min_sample)
    for arena in sorted(by_arena):
        group = by_arena[arena]
        stats.counts[arena] = len(group)
        stats.arena_means[arena] = float(np.mean([compute_geometry(s.x_std, s.y_std)[0] for s in group]))
    return stats


def krzywicki_adjust(shot, stats: ArenaMeanStats) -> tuple[float, float, float]:
    """(krzywickiX, krzywickiY, krzywickiDist): distance shrunk along the net ray."""
    dist, _ = compute_geometry(shot.x_std, shot.y_std)
    adj = max(0.0, dist - stats.delta(shot.arena_id))
    if dist == 0.0:
        return GOAL_LINE_X, 0.0, 0.0
    scale = adj / dist
    return GOAL_LINE_X + (shot.x_std - GOAL_LINE_X) * scale, shot.y_std * scale, adj


@dataclass
class AdjustmentTables:
    """Both venue corrections, serialized together as one JSON document."""

    cdf: ArenaCdfTable
    stats: ArenaMeanStats
    seasons: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"cdf": self.cdf.to_dict(), "stats": self.stats.to_dict(), "seasons": sorted(self.seasons)}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AdjustmentTables":
        doc = json.loads(text)
        return cls(ArenaCdfTable.from_dict(doc["cdf"]), ArenaMeanStats.from_dict(doc["stats"]), doc.get("seasons", []))


def build_adjustment_tables(shots, min_sample: int = MIN_SAMPLE) -> AdjustmentTables:
    shots = list(shots)
    return AdjustmentTables(
        build_cdf_tables(shots, min_sample),
        build_arena_stats(shots, min_sample),
        sorted({s.season for s in shots}),
    )


def adjust_shot(shot, tables: AdjustmentTables) -> dict[str, float]:
    sx, sy, sd, sa = schuckers_adjust(shot, tables.cdf)
    kx, ky, kd = krzywicki_adjust(shot, tables.stats)
    return {
        "krzywickiX": kx,
        "krzywickiY": ky,
        "krzywickiDist": kd,
        "SchuckersX": sx,
        "SchuckersY": sy,
        "SchuckersDist": sd,
        "SchuckersAngle": sa,
    }
