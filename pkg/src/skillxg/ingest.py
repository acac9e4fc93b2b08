"""Play-by-play ingestion: parse raw event files, fetch seasons, clean shots.

Raw files are newline-delimited JSON (one event per line) or CSV with a
header naming the :class:`RawEvent` fields. A ``.gz`` suffix on either is
decompressed transparently. Scores on an event are the state *before* that
event is credited, so a GOAL row still carries the pre-goal score.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import gzip
import io
import json
import logging
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

from .rink import BLUE_LINE_X

logger = logging.getLogger(__name__)

REGULATION_PERIOD_S = 1200


class EventType(str, Enum):
    SHOT = "SHOT"
    GOAL = "GOAL"
    MISS = "MISS"
    BLOCK = "BLOCK"
    FACEOFF = "FACEOFF"
    HIT = "HIT"
    GIVEAWAY = "GIVEAWAY"
    TAKEAWAY = "TAKEAWAY"
    PENALTY = "PENALTY"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, value) -> "EventType":
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            return cls.OTHER


ON_GOAL = (EventType.SHOT, EventType.GOAL)


class ParseError(ValueError):
    """A raw record could not be turned into a RawEvent."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class FetchError(RuntimeError):
    """Season download failed. ``retryable`` is False for client errors."""

    def __init__(self, season: str, message: str, status: Optional[int] = None, retryable: bool = True):
        super().__init__(f"season {season}: {message}")
        self.season = season
        self.status = status
        self.retryable = retryable


class FixtureMissingError(FetchError):
    def __init__(self, season: str):
        super().__init__(season, "fixture missing", retryable=True)


@dataclass(frozen=True)
class RawEvent:
    season: str
    game_id: str
    game_date: dt.date
    event_index: int
    event_type: EventType
    period: int
    period_time_s: float
    game_time_s: float
    team: str
    home_team: str
    arena_id: str
    strength: str
    score_home: int
    score_away: int
    x: Optional[float] = None
    y: Optional[float] = None
    shot_type: Optional[str] = None
    shooter_id: Optional[str] = None
    goalie_id: Optional[str] = None
    shooter_handedness: Optional[str] = None


RAW_FIELDS = [f.name for f in dataclasses.fields(RawEvent)]


@dataclass(frozen=True)
class PrevEvent:
    """The event immediately preceding a shot, in the shooter's frame."""

    event_type: EventType
    game_time_s: float
    team: str
    x: Optional[float] = None
    y: Optional[float] = None


@dataclass(frozen=True)
class ShotRecord:
    season: str
    game_id: str
    game_date: dt.date
    event_index: int
    event_type: EventType
    period: int
    period_time_s: float
    game_time_s: float
    team: str
    home_team: str
    arena_id: str
    strength: str
    score_home: int
    score_away: int
    x: float
    y: float
    shot_type: str
    shooter_id: str
    goalie_id: str
    shooter_handedness: Optional[str]
    x_std: float
    y_std: float
    outcome: int
    is_home_shot: bool
    goal_diff: int
    # preceding event context, already in the shooter's frame
    prev_event_type: Optional[EventType] = None
    prev_game_time_s: Optional[float] = None
    prev_team: Optional[str] = None
    prev_x: Optional[float] = None
    prev_y: Optional[float] = None

    @property
    def shot_id(self) -> str:
        return f"{self.game_id}:{self.event_index}"

    def prev_event(self) -> Optional[PrevEvent]:
        if self.prev_event_type is None:
            return None
        return PrevEvent(self.prev_event_type, self.prev_game_time_s, self.prev_team, self.prev_x, self.prev_y)


SHOT_FIELDS = [f.name for f in dataclasses.fields(ShotRecord)]


# ---------------------------------------------------------------------------
# field coercion


def _missing(value) -> bool:
    return value is None or (isinstance(value, str) and value.strip() == "") or value != value


def _opt_float(value) -> Optional[float]:
    return None if _missing(value) else float(value)


def _opt_str(value) -> Optional[str]:
    if _missing(value):
        return None
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return str(value).strip()


def _req(record: Mapping[str, Any], key: str):
    value = record.get(key)
    if _missing(value):
        raise KeyError(key)
    return value


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value).strip()[:10])


def _as_int(value) -> int:
    f = float(value)
    if not f.is_integer():
        raise ValueError(f"expected integer, got {value!r}")
    return int(f)


def event_from_mapping(record: Mapping[str, Any]) -> RawEvent:
    """Build a RawEvent from a loosely typed mapping (JSON object or CSV row)."""
    period = _as_int(_req(record, "period"))
    period_time = float(_req(record, "period_time_s"))
    game_time = _opt_float(record.get("game_time_s"))
    if game_time is None:
        game_time = REGULATION_PERIOD_S * (period - 1) + period_time
    hand = _opt_str(record.get("shooter_handedness"))
    if hand is not None:
        hand = hand.upper()
        if hand not in ("L", "R"):
            hand = None
    return RawEvent(
        season=_opt_str(_req(record, "season")),
        game_id=_opt_str(_req(record, "game_id")),
        game_date=_as_date(_req(record, "game_date")),
        event_index=_as_int(_req(record, "event_index")),
        event_type=EventType.parse(_req(record, "event_type")),
        period=period,
        period_time_s=period_time,
        game_time_s=game_time,
        team=_opt_str(_req(record, "team")),
        home_team=_opt_str(_req(record, "home_team")),
        arena_id=_opt_str(_req(record, "arena_id")),
        strength=_opt_str(_req(record, "strength")),
        score_home=_as_int(_req(record, "score_home")),
        score_away=_as_int(_req(record, "score_away")),
        x=_opt_float(record.get("x")),
        y=_opt_float(record.get("y")),
        shot_type=_opt_str(record.get("shot_type")),
        shooter_id=_opt_str(record.get("shooter_id")),
        goalie_id=_opt_str(record.get("goalie_id")),
        shooter_handedness=hand,
    )


def _to_jsonable(rec) -> dict:
    out = {}
    for key, value in dataclasses.asdict(rec).items():
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, dt.date):
            value = value.isoformat()
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# file io


def open_text(path, mode: str = "r"):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _is_csv(path) -> bool:
    suffixes = Path(path).suffixes
    return ".csv" in suffixes


def _iter_records(path) -> Iterator[tuple[int, Any]]:
    with open_text(path) as fh:
        if _is_csv(path):
            reader = csv.DictReader(fh)
            for line_no, row in enumerate(reader, start=2):
                yield line_no, row
        else:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield line_no, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield line_no, exc


def parse_pbp(path, on_error: str = "abort") -> list[RawEvent]:
    """Parse one raw play-by-play file into RawEvents, in file order.

    ``on_error`` is ``"abort"`` (raise :class:`ParseError`) or ``"skip"``
    (log the bad line and continue).
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', not {on_error!r}")
    events = []
    for line_no, record in _iter_records(path):
        try:
            if isinstance(record, Exception):
                raise ValueError(f"invalid JSON ({record.msg})")
            if not isinstance(record, Mapping):
                raise ValueError("record is not an object")
            events.append(event_from_mapping(record))
        except (KeyError, ValueError, TypeError) as exc:
            msg = f"missing field {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
            if on_error == "abort":
                raise ParseError(line_no, msg) from exc
            logger.warning("%s: skipping line %d: %s", path, line_no, msg)
    return events


def write_events(events: Iterable[RawEvent], path) -> None:
    _write_records((_to_jsonable(e) for e in events), path, RAW_FIELDS)


def write_shots(shots: Iterable[ShotRecord], path, fmt: Optional[str] = None) -> None:
    if fmt is None:
        fmt = "csv" if _is_csv(path) else "jsonl"
    target = Path(path)
    if fmt == "csv" and not _is_csv(target):
        raise ValueError("csv output requires a .csv path")
    _write_records((_to_jsonable(s) for s in shots), path, SHOT_FIELDS)


def _write_records(records: Iterable[dict], path, fields: Sequence[str]) -> None:
    with open_text(path, "w") as fh:
        if _is_csv(path):
            writer = csv.DictWriter(fh, fieldnames=list(fields))
            writer.writeheader()
            for rec in records:
                writer.writerow({k: ("" if v is None else v) for k, v in rec.items()})
        else:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")


def read_shots(path) -> list[ShotRecord]:
    shots = []
    for line_no, rec in _iter_records(path):
        if isinstance(rec, Exception):
            raise ParseError(line_no, "invalid JSON")
        base = event_from_mapping(rec)
        prev_type = _opt_str(rec.get("prev_event_type"))
        shots.append(
            ShotRecord(
                **{k: getattr(base, k) for k in RAW_FIELDS},
                x_std=float(rec["x_std"]),
                y_std=float(rec["y_std"]),
                outcome=_as_int(rec["outcome"]),
                is_home_shot=str(rec["is_home_shot"]).lower() in ("true", "1"),
                goal_diff=_as_int(rec["goal_diff"]),
                prev_event_type=None if prev_type is None else EventType.parse(prev_type),
                prev_game_time_s=_opt_float(rec.get("prev_game_time_s")),
                prev_team=_opt_str(rec.get("prev_team")),
                prev_x=_opt_float(rec.get("prev_x")),
                prev_y=_opt_float(rec.get("prev_y")),
            )
        )
    return shots


# ---------------------------------------------------------------------------
# season retrieval


class FixtureClient:
    """Offline adapter: season files live in a local fixture directory."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)
        self.calls = 0

    def _find(self, season: str) -> Optional[Path]:
        for candidate in sorted(self.fixture_dir.glob(f"{season}.*")):
            if candidate.is_file():
                return candidate
        return None

    def suffix(self, season: str) -> str:
        found = self._find(season)
        return "".join(found.suffixes) if found else ".jsonl"

    def fetch(self, season: str, dest: Path) -> None:
        self.calls += 1
        found = self._find(season)
        if found is None:
            raise FixtureMissingError(season)
        shutil.copyfile(found, dest)


class HttpClient:
    """Downloads ``{base_url}/{season}.jsonl`` with a requests-style session."""

    def __init__(self, base_url: str, session=None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session
        self.calls = 0

    @property
    def session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def suffix(self, season: str) -> str:
        return ".jsonl"

    def fetch(self, season: str, dest: Path) -> None:
        self.calls += 1
        url = f"{self.base_url}/{season}.jsonl"
        try:
            resp = self.session.get(url, timeout=self.timeout)
        except Exception as exc:  # network layer: connection reset, DNS, timeout
            raise FetchError(season, f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise FetchError(
                season, f"HTTP {resp.status_code}", status=resp.status_code, retryable=resp.status_code >= 500
            )
        dest.write_bytes(resp.content)


def client_from_config(config: Mapping[str, Any]):
    """Build an adapter from ``ingest.api_base`` / ``ingest.fixtures`` keys."""
    section = config.get("ingest", config)
    if section.get("fixtures"):
        return FixtureClient(section["fixtures"])
    if section.get("api_base"):
        return HttpClient(section["api_base"])
    raise ValueError("ingest config needs 'fixtures' or 'api_base'")


def fetch_season(client, season: str, cache_dir) -> Path:
    """Return the cached raw file for ``season``, fetching it only on a cache miss."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    for hit in sorted(cache_dir.glob(f"{season}.*")):
        if hit.is_file() and not hit.name.endswith(".part"):
            return hit
    dest = cache_dir / f"{season}{client.suffix(season)}"
    tmp = dest.with_name(dest.name + ".part")
    try:
        client.fetch(season, tmp)
        tmp.replace(dest)
    finally:
        if tmp.exists():
            tmp.unlink()
    return dest


# ---------------------------------------------------------------------------
# cleaning


def standardize_coords(x: float, y: float, attacks_positive_x: bool) -> tuple[float, float]:
    """Rotate a location so the attacked net sits at (+89, 0)."""
    if attacks_positive_x:
        return x, y
    return -x + 0.0, -y + 0.0


DirectionKey = tuple[str, int, str]


def load_direction_table(path) -> dict[DirectionKey, bool]:
    """Read ``game_id, period, team, attacks_positive_x`` rows (CSV or JSONL)."""
    table = {}
    for line_no, rec in _iter_records(path):
        if isinstance(rec, Exception):
            raise ParseError(line_no, "invalid JSON")
        flag = rec["attacks_positive_x"]
        if isinstance(flag, str):
            flag = flag.strip().lower() in ("true", "1", "yes")
        table[(_opt_str(rec["game_id"]), _as_int(rec["period"]), _opt_str(rec["team"]))] = bool(flag)
    return table


def write_direction_table(table: Mapping[DirectionKey, bool], path) -> None:
    rows = [
        {"game_id": g, "period": p, "team": t, "attacks_positive_x": bool(v)}
        for (g, p, t), v in sorted(table.items())
    ]
    _write_records(rows, path, ["game_id", "period", "team", "attacks_positive_x"])


def derive_direction_table(events: Iterable[RawEvent]) -> dict[DirectionKey, bool]:
    """Majority vote of shot-attempt x sign per game, period and team."""
    votes: dict[DirectionKey, int] = {}
    for ev in events:
        if ev.event_type in (EventType.SHOT, EventType.GOAL, EventType.MISS) and ev.x is not None and ev.x != 0:
            key = (ev.game_id, ev.period, ev.team)
            votes[key] = votes.get(key, 0) + (1 if ev.x > 0 else -1)
    return {key: v > 0 for key, v in votes.items() if v != 0}


def _direction(table, game_id, period, team, teams_in_game) -> Optional[bool]:
    hit = table.get((game_id, period, team))
    if hit is not None:
        return hit
    for other in teams_in_game:
        if other != team and (game_id, period, other) in table:
            return not table[(game_id, period, other)]
    return None


class MissingDirectionError(KeyError):
    pass


def _clean_game(game_events: list[RawEvent], table, table_teams=()) -> list[ShotRecord]:
    game_events = sorted(game_events, key=lambda e: e.event_index)
    teams = sorted({e.team for e in game_events} | {e.home_team for e in game_events} | set(table_teams))
    game_id = game_events[0].game_id
    out = []
    prev: Optional[RawEvent] = None
    for ev in game_events:
        candidate, last = ev, prev
        prev = ev
        if candidate.event_type not in ON_GOAL or candidate.strength != "5v5":
            continue
        if None in (candidate.x, candidate.y, candidate.shot_type, candidate.shooter_id, candidate.goalie_id):
            continue
        direction = _direction(table, game_id, candidate.period, candidate.team, teams)
        if direction is None:
            raise MissingDirectionError(game_id)
        x_std, y_std = standardize_coords(candidate.x, candidate.y, direction)
        if x_std < BLUE_LINE_X:
            continue
        home = candidate.team == candidate.home_team
        diff = candidate.score_home - candidate.score_away
        prev_fields = {}
        if last is not None and last.period == candidate.period:
            px = py = None
            if last.x is not None and last.y is not None:
                px, py = standardize_coords(last.x, last.y, direction)
            prev_fields = dict(
                prev_event_type=last.event_type,
                prev_game_time_s=last.game_time_s,
                prev_team=last.team,
                prev_x=px,
                prev_y=py,
            )
        out.append(
            ShotRecord(
                **{k: getattr(candidate, k) for k in RAW_FIELDS},
                x_std=x_std,
                y_std=y_std,
                outcome=int(candidate.event_type == EventType.GOAL),
                is_home_shot=home,
                goal_diff=diff if home else -diff,
                **prev_fields,
            )
        )
    return out


def clean_and_filter(events: Sequence[RawEvent], directions: Mapping[DirectionKey, bool]) -> list[ShotRecord]:
    """Keep standardized 5v5 on-goal offensive-zone shots with complete fields.

    Games missing from ``directions`` are logged and skipped. Output is in
    canonical (game_date, game_id, event_index) order.
    """
    by_game: dict[str, list[RawEvent]] = {}
    for ev in events:
        by_game.setdefault(ev.game_id, []).append(ev)
    table_teams: dict[str, set] = {}
    for game_id, _, team in directions:
        table_teams.setdefault(game_id, set()).add(team)
    shots = []
    for game_id, game_events in by_game.items():
        try:
            shots.extend(_clean_game(game_events, directions, table_teams.get(game_id, ())))
        except MissingDirectionError:
            logger.error("game %s has no attack-direction entry; skipped", game_id)
    shots.sort(key=lambda s: (s.game_date, s.game_id, s.event_index))
    return shots
