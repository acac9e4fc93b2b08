"""Seeded play-by-play generator with planted shooter and goalie skill.

Every shot's true goal probability is a logistic function of its *true*
location and context::

    logit p = B0 + B_DIST*dist + B_ANGLE*|angle|/10 + type effect
              + B_REBOUND*rebound + B_RUSH*rush + B_STRONG*strong_side
              + log m_shooter - log m_goalie

with ``m ~ LogNormal(0, skill_sd)`` per shooter and per goalie. Recorded
locations pass through a per-arena scorekeeper distortion that stretches or
shrinks distance to the net, so a rink-adjustment stage has something to fix.
Output is a list of :class:`RawEvent` plus a complete attack-direction
table, ready for :func:`skillxg.ingest.clean_and_filter`.
"""

from __future__ import annotations

import bisect
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ingest import EventType, RawEvent
from .rink import GOAL_LINE_X, HALF_WIDTH

B0 = -1.25
B_DIST = -0.055
B_ANGLE = -0.08
B_REBOUND = 0.9
B_RUSH = 0.5
B_STRONG = 0.15

SHOT_TYPES = {
    "wrist": (0.45, 0.0),
    "snap": (0.15, 0.1),
    "slap": (0.12, -0.1),
    "backhand": (0.10, -0.2),
    "tip-in": (0.10, 0.3),
    "deflected": (0.05, 0.2),
    "wrap-around": (0.03, -0.4),
}
_TYPE_NAMES = list(SHOT_TYPES)
_TYPE_P = np.array([p for p, _ in SHOT_TYPES.values()])
_TYPE_CUM = list(np.cumsum(_TYPE_P / _TYPE_P.sum()))

# background event mix; shot attempts are inserted separately
_OTHER_TYPES = [EventType.FACEOFF, EventType.HIT, EventType.GIVEAWAY, EventType.TAKEAWAY, EventType.BLOCK, EventType.OTHER]
_OTHER_CUM = list(np.cumsum([0.25, 0.25, 0.14, 0.12, 0.16, 0.08]))


def _pick(rng, cum) -> int:
    return min(bisect.bisect_right(cum, rng.random()), len(cum) - 1)


PERIOD_S = 1200
PENALTY_S = 120


@dataclass
class SyntheticCorpus:
    events: list
    directions: dict
    shooter_log_mult: dict
    goalie_log_mult: dict
    arena_bias: dict
    seasons: list = field(default_factory=list)


@dataclass
class _Team:
    name: str
    arena: str
    skaters: list
    cum_weights: list
    goalies: list


def season_id(year: int) -> str:
    return f"{year}{year + 1}"


def _build_league(rng, n_teams, skaters_per_team, goalies_per_team, skill_sd, biased_share, bias_range):
    teams, shooter_mult, goalie_mult, arena_bias = [], {}, {}, {}
    for t in range(n_teams):
        name = f"T{t:02d}"
        arena = f"A{t:02d}"
        skaters = [f"{name}S{i:02d}" for i in range(skaters_per_team)]
        goalies = [f"{name}G{i}" for i in range(goalies_per_team)]
        for s in skaters:
            shooter_mult[s] = float(rng.normal(0.0, skill_sd))
        for g in goalies:
            goalie_mult[g] = float(rng.normal(0.0, skill_sd))
        arena_bias[arena] = float(rng.uniform(-bias_range, bias_range)) if rng.random() < biased_share else 0.0
        weights = rng.dirichlet(np.full(skaters_per_team, 3.0))
        teams.append(_Team(name, arena, skaters, list(np.cumsum(weights)), goalies))
    handed = {s: ("L" if rng.random() < 0.6 else "R") for s in shooter_mult}
    return teams, shooter_mult, goalie_mult, arena_bias, handed


def _true_location(rng, rebound: bool) -> tuple[float, float]:
    d = 2.0 + rng.gamma(2.0, 2.5) if rebound else 4.0 + rng.gamma(2.2, 13.0)
    theta = math.radians(_clip(rng.normal(0.0, 38.0), 150.0))
    return d, theta


def _clip(v: float, bound: float) -> float:
    return max(-bound, min(bound, float(v)))


def _to_xy(d: float, theta: float) -> tuple[float, float]:
    x = GOAL_LINE_X - d * math.cos(theta)
    y = d * math.sin(theta)
    return _clip(x, 99.0), _clip(y, HALF_WIDTH - 0.5)


def goal_logit(d, theta, shot_type, rebound, rush, strong, shooter_lm, goalie_lm) -> float:
    return (
        B0
        + B_DIST * d
        + B_ANGLE * abs(math.degrees(theta)) / 10.0
        + SHOT_TYPES[shot_type][1]
        + B_REBOUND * rebound
        + B_RUSH * rush
        + B_STRONG * strong
        + shooter_lm
        - goalie_lm
    )


class _Game:
    """Mutable state while one game's event stream is written."""

    def __init__(self, rng, season, game_id, date, home, away, corpus_maps, p_missing):
        self.rng = rng
        self.season, self.game_id, self.date = season, game_id, date
        self.home, self.away = home, away
        self.shooter_mult, self.goalie_mult, self.arena_bias, self.handed = corpus_maps
        self.p_missing = p_missing
        self.events: list[RawEvent] = []
        self.score = {home.name: 0, away.name: 0}
        self.goalie = {t.name: (t.goalies[0] if rng.random() < 0.75 else rng.choice(t.goalies[1:] or t.goalies)) for t in (home, away)}
        self.home_positive = {}
        self.clock = 0.0
        self.pp_until = -1.0
        self.short_team: Optional[str] = None

    def _strength(self, game_t: float) -> str:
        if game_t >= self.pp_until or self.short_team is None:
            return "5v5"
        return "4v5" if self.short_team == self.home.name else "5v4"

    def _attacks_positive(self, team: str, period: int) -> bool:
        home_pos = self.home_positive[period]
        return home_pos if team == self.home.name else not home_pos

    def _emit(self, etype, period, t, team, x=None, y=None, **extra):
        # follow-ups and rush lead-ins may overlap the next draw; keep the clock monotone
        t = self.clock = max(t, self.clock)
        game_t = (period - 1) * PERIOD_S + t
        self.events.append(
            RawEvent(
                season=self.season,
                game_id=self.game_id,
                game_date=self.date,
                event_index=len(self.events),
                event_type=etype,
                period=period,
                period_time_s=round(t, 1),
                game_time_s=round(game_t, 1),
                team=team,
                home_team=self.home.name,
                arena_id=self.home.arena,
                strength=self._strength(game_t),
                score_home=self.score[self.home.name],
                score_away=self.score[self.away.name],
                x=x,
                y=y,
                **extra,
            )
        )

    def _abs(self, team, period, x_std, y_std):
        if self._attacks_positive(team, period):
            return x_std, y_std
        return -x_std + 0.0, -y_std + 0.0

    def _background(self, period, t, team):
        rng = self.rng
        etype = _OTHER_TYPES[_pick(rng, _OTHER_CUM)]
        x = float(round(rng.uniform(-99, 99)))
        y = float(round(rng.uniform(-42, 42)))
        self._emit(etype, period, t, team, x, y)

    def _shot(self, period, t, team: _Team, rebound: bool, rush: bool) -> bool:
        rng = self.rng
        opp = self.away if team is self.home else self.home
        shooter = team.skaters[_pick(rng, team.cum_weights)]
        goalie = self.goalie[opp.name]
        d, theta = _true_location(rng, rebound)
        shot_type = _TYPE_NAMES[_pick(rng, _TYPE_CUM)]
        if rebound and rng.random() < 0.5:
            shot_type = "tip-in"
        _, y_true = _to_xy(d, theta)
        hand = self.handed[shooter]
        strong = (hand == "L" and y_true > 0) or (hand == "R" and y_true < 0)
        logit = goal_logit(d, theta, shot_type, rebound, rush, strong, self.shooter_mult[shooter], self.goalie_mult[goalie])
        on_net = rng.random() < 0.72
        goal = on_net and rng.random() < 1.0 / (1.0 + math.exp(-logit))
        # scorekeeper distortion of the recorded distance
        x_rec, y_rec = _to_xy(d * (1.0 + self.arena_bias[self.home.arena]), theta)
        x_abs, y_abs = self._abs(team.name, period, float(round(x_rec)), float(round(y_rec)))
        if rng.random() < self.p_missing:
            x_abs = y_abs = None
        etype = EventType.GOAL if goal else (EventType.SHOT if on_net else EventType.MISS)
        self._emit(
            etype,
            period,
            t,
            team.name,
            x_abs,
            y_abs,
            shot_type=None if rng.random() < self.p_missing else shot_type,
            shooter_id=shooter,
            goalie_id=None if rng.random() < self.p_missing else goalie,
            shooter_handedness=hand,
        )
        if goal:
            self.score[team.name] += 1
        return etype == EventType.SHOT

    def play(self, attempts_per_period: float, background_per_period: float):
        rng = self.rng
        start_pos = rng.random() < 0.5
        for period in (1, 2, 3):
            self.home_positive[period] = start_pos if period != 2 else not start_pos
            self.clock = 0.0
            self._emit(EventType.FACEOFF, period, 0.0, self.home.name, 0.0, 0.0)
            n_att = rng.poisson(attempts_per_period)
            n_bg = rng.poisson(background_per_period)
            kinds = np.array([0] * n_att + [1] * n_bg + [2] * rng.poisson(0.6))
            times = np.sort(rng.uniform(5.0, PERIOD_S - 5.0, kinds.size))
            kinds = kinds[rng.permutation(kinds.size)]
            for t, kind in zip(times, kinds):
                t = float(t)
                team = self.home if rng.random() < 0.52 else self.away
                if kind == 1:
                    self._background(period, t, team.name)
                    continue
                if kind == 2:
                    self._emit(EventType.PENALTY, period, t, team.name)
                    self.short_team = team.name
                    self.pp_until = (period - 1) * PERIOD_S + t + PENALTY_S
                    continue
                rush = rng.random() < 0.1
                if rush:
                    # the puck was won outside the attacking zone seconds earlier
                    lead = float(rng.uniform(1.0, 3.5))
                    bx, by = self._abs(team.name, period, float(round(rng.uniform(-20, 20))), float(round(rng.uniform(-35, 35))))
                    self._emit(EventType.TAKEAWAY, period, max(t - lead, 0.0), team.name, bx, by)
                saved = self._shot(period, t, team, rebound=False, rush=rush)
                if saved and rng.random() < 0.14:
                    self._shot(period, min(t + float(rng.uniform(0.4, 2.0)), PERIOD_S), team, rebound=True, rush=False)

    def directions(self) -> dict:
        out = {}
        for period, home_pos in self.home_positive.items():
            out[(self.game_id, period, self.home.name)] = home_pos
            out[(self.game_id, period, self.away.name)] = not home_pos
        return out


def generate_corpus(
    seed: int = 0,
    first_season: int = 2001,
    n_seasons: int = 3,
    games_per_season: int = 500,
    n_teams: int = 16,
    skaters_per_team: int = 6,
    goalies_per_team: int = 2,
    skill_sd: float = 0.25,
    attempts_per_period: float = 19.0,
    background_per_period: float = 40.0,
    biased_share: float = 0.4,
    bias_range: float = 0.15,
    p_missing: float = 0.004,
) -> SyntheticCorpus:
    """Generate a multi-season league; the same seed always yields the same events."""
    rng = np.random.default_rng(seed)
    teams, shooter_mult, goalie_mult, arena_bias, handed = _build_league(
        rng, n_teams, skaters_per_team, goalies_per_team, skill_sd, biased_share, bias_range
    )
    maps = (shooter_mult, goalie_mult, arena_bias, handed)
    events, directions, seasons = [], {}, []
    for s in range(n_seasons):
        year = first_season + s
        season = season_id(year)
        seasons.append(season)
        opening = dt.date(year, 10, 1)
        for g in range(games_per_season):
            h, a = rng.choice(n_teams, size=2, replace=False)
            date = opening + dt.timedelta(days=int(g * 180 / games_per_season))
            game = _Game(rng, season, f"{season}{g:05d}", date, teams[h], teams[a], maps, p_missing)
            game.play(attempts_per_period, background_per_period)
            events.extend(game.events)
            directions.update(game.directions())
    return SyntheticCorpus(events, directions, shooter_mult, goalie_mult, arena_bias, seasons)


def generate_shots(seed: int = 0, **kwargs):
    """Convenience: generate a corpus and run it through ingestion cleaning."""
    from .ingest import clean_and_filter

    corpus = generate_corpus(seed, **kwargs)
    return clean_and_filter(corpus.events, corpus.directions), corpus
