import datetime as dt

import pytest
from hypothesis import settings

from skillxg.ingest import EventType, RawEvent

# first calls pay numba compilation, and the box has one core
settings.register_profile("ci", deadline=None)
settings.load_profile("ci")


def make_event(**overrides) -> RawEvent:
    base = dict(
        season="20212022",
        game_id="G1",
        game_date=dt.date(2021, 10, 12),
        event_index=0,
        event_type=EventType.SHOT,
        period=1,
        period_time_s=100.0,
        game_time_s=100.0,
        team="HOM",
        home_team="HOM",
        arena_id="A1",
        strength="5v5",
        score_home=0,
        score_away=0,
        x=70.0,
        y=5.0,
        shot_type="wrist",
        shooter_id="P1",
        goalie_id="G9",
        shooter_handedness="L",
    )
    base.update(overrides)
    if "period_time_s" in overrides and "game_time_s" not in overrides:
        base["game_time_s"] = 1200.0 * (base["period"] - 1) + base["period_time_s"]
    return RawEvent(**base)


@pytest.fixture
def event_factory():
    return make_event


@pytest.fixture(scope="session")
def small_corpus():
    """A compact three-season synthetic league, cleaned into shots."""
    from skillxg.synthetic import generate_shots

    shots, corpus = generate_shots(11, games_per_season=60, n_teams=6)
    return shots, corpus
