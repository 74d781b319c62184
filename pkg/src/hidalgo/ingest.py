"""Player-tracking ingestion and the analysis matrices built from it.

Court coordinates are in feet on a 94 x 50 court. Plays are stored in a
normalised orientation in which the offence attacks the basket at
``x = 94`` (``HOOP``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np


COURT_LENGTH = 94.0
COURT_WIDTH = 50.0
CENTER_LINE = 47.0
HOOP = (88.75, 25.0)
RAW_FPS = 25.0
TRACKING_COLUMNS = ("game_id", "event_id", "frame", "timestamp", "entity_type", "team", "player_id", "x", "y", "z")
SHOT_OUTCOMES = ("ShotMade", "ShotMissed")
MARGIN_BANDS = ("small", "medium", "large", "huge")
SHOT_CLASSES = ("short", "mid_range", "three_points")


class TrackingWarning(UserWarning):
    pass


class TrackingDataError(ValueError):
    pass


class FlatTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class PlayerPosition:
    team: str
    player_id: str
    x: float
    y: float


@dataclass(frozen=True)
class TrackingFrame:
    game_id: str
    event_id: str
    frame_index: int
    timestamp: float
    players: tuple
    ball: tuple

    def sorted_players(self) -> tuple:
        return tuple(sorted(self.players, key=lambda p: (p.team, p.player_id)))

    def roster(self) -> tuple:
        return tuple((p.team, p.player_id) for p in self.sorted_players())

    def reflected(self) -> "TrackingFrame":
        players = tuple(replace(p, x=COURT_LENGTH - p.x, y=COURT_WIDTH - p.y) for p in self.players)
        bx, by, bz = self.ball
        return replace(self, players=players, ball=(COURT_LENGTH - bx, COURT_WIDTH - by, bz))


@dataclass
class Play:
    event_id: str
    frames: list
    offense_team: str | None = None
    outcome: str = "Other"
    score_margin_at_start: float = 0.0
    shooter_id: str | None = None
    game_id: str = ""
    segment: int = 0

    def __post_init__(self):
        times = [f.timestamp for f in self.frames]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError(f"frames of play {self.event_id} are not time-ordered")

    @property
    def duration(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].timestamp - self.frames[0].timestamp

    @property
    def teams(self) -> tuple:
        if not self.frames:
            return ()
        return tuple(sorted({p.team for p in self.frames[0].players}))

    @property
    def defense_team(self) -> str | None:
        others = [t for t in self.teams if t != self.offense_team]
        return others[0] if len(others) == 1 else None

    def with_frames(self, frames) -> "Play":
        return replace(self, frames=list(frames))


@dataclass
class ParseReport:
    frames_total: int = 0
    frames_dropped: list = field(default_factory=list)
    malformed_lines: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# tracking csv


def _num(value, name, lineno):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"line {lineno}: {name}={value!r} is not a number") from None
    if not math.isfinite(out):
        raise ValueError(f"line {lineno}: {name}={value!r} is not finite")
    return out


def parse_tracking_csv(stream, max_drop_fraction: float = 0.05, report: ParseReport | None = None) -> list:
    """Parse the tracking schema into validated frames.

    Frames missing entities, holding out-of-court coordinates or referring
    to malformed rows are dropped with a ``TrackingWarning``; if more than
    ``max_drop_fraction`` of the frames are dropped a ``TrackingDataError``
    is raised. Frames are returned ordered by (game_id, event_id, frame).
    """
    if isinstance(stream, (str, bytes)) and not isinstance(stream, io.IOBase):
        raise TypeError("pass an open text stream, not a path")
    report = report if report is not None else ParseReport()
    reader = csv.reader(stream)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in TRACKING_COLUMNS if c not in header]
    if missing:
        raise TrackingDataError(f"tracking header lacks columns {missing}")
    col = {name: header.index(name) for name in TRACKING_COLUMNS}
    groups = defaultdict(lambda: {"players": [], "ball": [], "timestamp": None, "bad": []})
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not v.strip() for v in row):
            continue
        try:
            if len(row) < len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            key = (row[col["game_id"]].strip(), row[col["event_id"]].strip(), int(row[col["frame"]]))
        except ValueError as exc:
            report.malformed_lines.append((lineno, str(exc)))
            continue
        g = groups[key]
        try:
            ts = _num(row[col["timestamp"]], "timestamp", lineno)
            if g["timestamp"] is not None and g["timestamp"] != ts:
                raise ValueError(f"line {lineno}: timestamp differs within frame {key[2]}")
            g["timestamp"] = ts
            kind = row[col["entity_type"]].strip().lower()
            x = _num(row[col["x"]], "x", lineno)
            y = _num(row[col["y"]], "y", lineno)
            if kind == "player":
                if not (0 <= x <= COURT_LENGTH and 0 <= y <= COURT_WIDTH):
                    raise ValueError(f"line {lineno}: player position ({x}, {y}) off the court")
                g["players"].append(PlayerPosition(row[col["team"]].strip(), row[col["player_id"]].strip(), x, y))
            elif kind == "ball":
                z = _num(row[col["z"]], "z", lineno)
                if z < 0:
                    raise ValueError(f"line {lineno}: negative ball height {z}")
                g["ball"].append((x, y, z))
            else:
                raise ValueError(f"line {lineno}: unknown entity_type {kind!r}")
        except ValueError as exc:
            report.malformed_lines.append((lineno, str(exc)))
            g["bad"].append(lineno)
    frames = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        g = groups[key]
        report.frames_total += 1
        n_players, n_ball = len(g["players"]), len(g["ball"])
        ids = {(p.team, p.player_id) for p in g["players"]}
        reason = None
        if g["bad"]:
            reason = f"malformed rows at lines {g['bad']}"
        elif n_players != 10 or n_ball != 1:
            reason = f"{n_players} players and {n_ball} ball rows (need 10 and 1)"
        elif len(ids) != 10:
            reason = "repeated player ids"
        if reason:
            report.frames_dropped.append((key, reason))
            warnings.warn(f"dropping frame {key}: {reason}", TrackingWarning, stacklevel=2)
            continue
        frames.append(TrackingFrame(key[0], key[1], key[2], g["timestamp"], tuple(g["players"]), g["ball"][0]))
    if report.frames_total and len(report.frames_dropped) > max_drop_fraction * report.frames_total:
        raise TrackingDataError(
            f"{len(report.frames_dropped)} of {report.frames_total} frames dropped "
            f"(more than {max_drop_fraction:.0%})"
        )
    return frames


def write_tracking_csv(frames, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRACKING_COLUMNS)
    for f in frames:
        for p in f.players:
            w.writerow([f.game_id, f.event_id, f.frame_index, repr(f.timestamp), "player", p.team, p.player_id,
                        repr(p.x), repr(p.y), ""])
        bx, by, bz = f.ball
        w.writerow([f.game_id, f.event_id, f.frame_index, repr(f.timestamp), "ball", "", "",
                    repr(bx), repr(by), repr(bz)])


# ---------------------------------------------------------------------------
# play-by-play


@dataclass
class PlayByPlay:
    event_id: str
    outcome: str
    shooter_id: str | None
    score_home: float
    score_away: float
    game_id: str = ""
    offense_team: str | None = None
    attack_direction: str | None = None
    home_team: str | None = None

    @property
    def margin(self) -> float:
        return abs(self.score_home - self.score_away)


def parse_pbp_csv(stream) -> dict:
    """Play-by-play rows keyed by ``(game_id, event_id)`` (game_id is '' when absent)."""
    reader = csv.DictReader(stream)
    required = {"event_id", "outcome", "shooter_id", "score_home", "score_away"}
    missing = required - set(reader.fieldnames or ())
    if missing:
        raise TrackingDataError(f"play-by-play header lacks columns {sorted(missing)}")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        outcome = row["outcome"].strip()
        outcome = outcome if outcome in SHOT_OUTCOMES else "Other"
        direction = (row.get("attack_direction") or "").strip().lower() or None
        if direction not in (None, "left", "right"):
            raise TrackingDataError(f"line {lineno}: attack_direction must be 'left' or 'right'")
        rec = PlayByPlay(
            event_id=row["event_id"].strip(),
            outcome=outcome,
            shooter_id=(row["shooter_id"] or "").strip() or None,
            score_home=_num(row["score_home"], "score_home", lineno),
            score_away=_num(row["score_away"], "score_away", lineno),
            game_id=(row.get("game_id") or "").strip(),
            offense_team=(row.get("offense_team") or "").strip() or None,
            attack_direction=direction,
            home_team=(row.get("home_team") or "").strip() or None,
        )
        out[(rec.game_id, rec.event_id)] = rec
    return out


# ---------------------------------------------------------------------------
# plays


def _interpolate(a: TrackingFrame, b: TrackingFrame, index: int) -> TrackingFrame:
    w = (index - a.frame_index) / (b.frame_index - a.frame_index)
    pos_b = {(p.team, p.player_id): p for p in b.players}
    players = tuple(
        replace(p, x=p.x + w * (pos_b[(p.team, p.player_id)].x - p.x), y=p.y + w * (pos_b[(p.team, p.player_id)].y - p.y))
        for p in a.players
    )
    ball = tuple(u + w * (v - u) for u, v in zip(a.ball, b.ball))
    return replace(a, frame_index=index, timestamp=a.timestamp + w * (b.timestamp - a.timestamp),
                   players=players, ball=ball)


def fill_gaps(frames, max_gap: int = 2) -> list:
    """Linearly interpolate runs of at most ``max_gap`` missing frames; split at longer gaps.

    Returns a list of frame segments.
    """
    if not frames:
        return []
    segments = [[frames[0]]]
    for prev, cur in zip(frames, frames[1:]):
        missing = cur.frame_index - prev.frame_index - 1
        if missing > max_gap:
            segments.append([cur])
            continue
        for idx in range(prev.frame_index + 1, cur.frame_index):
            segments[-1].append(_interpolate(prev, cur, idx))
        segments[-1].append(cur)
    return segments


def _infer_offense(frame: TrackingFrame) -> str:
    bx, by, _ = frame.ball
    nearest = min(frame.players, key=lambda p: ((p.x - bx) ** 2 + (p.y - by) ** 2, p.team, p.player_id))
    return nearest.team


def build_plays(frames, pbp: dict | None = None, max_gap: int = 2) -> list:
    """Group frames into plays, fill short gaps, and normalise the attacking direction.

    Plays whose roster changes (a substitution inside the window) are
    dropped with a warning. A play split by a long gap yields one ``Play``
    per segment (``segment`` = 0, 1, ...).
    """
    pbp = pbp or {}
    grouped = defaultdict(list)
    for f in frames:
        grouped[(f.game_id, f.event_id)].append(f)
    plays = []
    for key in sorted(grouped):
        fs = sorted(grouped[key], key=lambda f: f.frame_index)
        if len({f.roster() for f in fs}) > 1:
            warnings.warn(f"play {key}: roster changes inside the play; dropped", TrackingWarning, stacklevel=2)
            continue
        rec = pbp.get(key) or pbp.get(("", key[1]))
        shooter_team = None
        if rec is not None and rec.shooter_id:
            shooter_team = next((p.team for p in fs[0].players if p.player_id == rec.shooter_id), None)
        offense = (rec.offense_team if rec else None) or shooter_team or _infer_offense(fs[0])
        direction = rec.attack_direction if rec else None
        if direction is None:
            direction = "right" if fs[-1].ball[0] >= CENTER_LINE else "left"
        if direction == "left":
            fs = [f.reflected() for f in fs]
        for seg_no, seg in enumerate(fill_gaps(fs, max_gap)):
            plays.append(Play(
                event_id=key[1], frames=seg, offense_team=offense,
                outcome=rec.outcome if rec else "Other",
                score_margin_at_start=rec.margin if rec else 0.0,
                shooter_id=rec.shooter_id if rec else None,
                game_id=key[0], segment=seg_no,
            ))
    return plays


def downsample(play: Play, factor: int = 10) -> Play:
    """Keep frames 0, factor, 2*factor, ... (25 fps -> 2.5 fps for the default)."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    return play.with_frames(play.frames[::factor])


def offensive_half_filter(play: Play) -> Play:
    """Longest suffix of frames with the ball beyond the centre line."""
    start = len(play.frames)
    while start > 0 and play.frames[start - 1].ball[0] > CENTER_LINE:
        start -= 1
    return play.with_frames(play.frames[start:])


def movement_matrix(play: Play) -> np.ndarray:
    """Frames x 20 matrix of (x, y) per player, players ordered by (team, player_id)."""
    if len(play.frames) < 3:
        raise ValueError(f"play {play.event_id}: {len(play.frames)} frames, need at least 3")
    return np.array([[v for p in f.sorted_players() for v in (p.x, p.y)] for f in play.frames])


def speed_angle(play: Play):
    """Per-player step length and heading between consecutive frames, each (F-1) x 10.

    The heading uses the two-argument arctangent, in (-pi, pi]; a player who
    does not move gets heading 0.
    """
    if len(play.frames) < 4:
        raise ValueError(f"play {play.event_id}: {len(play.frames)} frames, need at least 4")
    xy = movement_matrix(play).reshape(len(play.frames), 10, 2)
    step = np.diff(xy, axis=0)
    dx, dy = step[..., 0], step[..., 1]
    speed = np.sqrt(dy * dy + dx * dx)
    # libm atan2 elementwise: numpy's vectorised arctan2 can differ in the last bit
    angle = np.where(speed > 0, _atan2(dy, dx), 0.0)
    return speed, angle


_atan2 = np.vectorize(math.atan2, otypes=[float])


def shot_moment(play: Play) -> int:
    """Index of the release frame, inferred from the ball height.

    The apex is the last frame at the play's maximum height. Walking back
    from it while the height strictly decreases gives the trough that
    starts the final ascent; the release is the first frame above that
    trough, or frame 0 when the ascent is already under way at the start.
    """
    z = np.array([f.ball[2] for f in play.frames])
    if z.size == 0:
        raise ValueError(f"play {play.event_id} has no frames")
    if np.ptp(z) == 0:
        raise FlatTrajectory(f"play {play.event_id}: ball height never changes")
    apex = int(np.flatnonzero(z == z.max())[-1])
    start = apex
    while start > 0 and z[start - 1] < z[start]:
        start -= 1
    if start == 0 or start == apex:
        return start
    return start + 1


def shooter_distance(frame: TrackingFrame, shooter_id) -> float:
    for p in frame.players:
        if p.player_id == shooter_id:
            return math.hypot(p.x - HOOP[0], p.y - HOOP[1])
    return float("nan")


@dataclass
class ShotChartSet:
    matrix: np.ndarray
    outcomes: np.ndarray
    shooter_distance: np.ndarray
    event_ids: list
    mode: str
    team: str
    margins: np.ndarray = None
    shot_frames: list = field(default_factory=list)

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    def categories(self) -> list:
        return [categorize_shot(d) if not math.isnan(d) else None for d in self.shooter_distance]

    def metadata(self) -> dict:
        return {
            "mode": self.mode,
            "team": self.team,
            "D": self.D,
            "event_ids": list(self.event_ids),
            "outcomes": [int(v) for v in self.outcomes],
            "shooter_distance": [None if math.isnan(v) else float(v) for v in self.shooter_distance],
            "shot_category": self.categories(),
            "score_margin": [float(v) for v in self.margins],
            "margin_category": [categorize_margin(v) for v in self.margins],
            "shot_frame": list(self.shot_frames),
        }


SHOT_MODES = ("two-team", "single-attack", "single-defense")
_MODE_ALIASES = {"TwoTeam": "two-team", "SingleTeamAttack": "single-attack", "SingleTeamDefense": "single-defense"}


def build_shot_charts(plays, mode: str, team: str) -> ShotChartSet:
    """Player positions at the release frame of each qualifying shot.

    ``two-team``: shots by ``team``, all 20 coordinates.
    ``single-attack``: shots by ``team``, its own 10 coordinates.
    ``single-defense``: shots against ``team``, its own 10 coordinates.
    The ball is not included.
    """
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in SHOT_MODES:
        raise ValueError(f"mode must be one of {SHOT_MODES}, got {mode!r}")
    rows, outcomes, deltas, events, margins, shot_frames = [], [], [], [], [], []
    games = {p.game_id for p in plays}
    if len(games) > 1:
        raise ValueError(f"shot charts are built per game, got games {sorted(games)}")
    known = {t for p in plays for t in p.teams}
    if team not in known:
        raise ValueError(f"team {team!r} does not appear in the plays (teams: {sorted(known)})")
    for play in plays:
        if play.outcome not in SHOT_OUTCOMES or not play.frames:
            continue
        attacking = play.offense_team == team
        if (mode == "single-defense") == attacking:
            continue
        idx = shot_moment(play)
        frame = play.frames[idx]
        players = frame.sorted_players()
        if mode != "two-team":
            players = [p for p in players if p.team == team]
        rows.append([v for p in players for v in (p.x, p.y)])
        outcomes.append(1 if play.outcome == "ShotMade" else 0)
        deltas.append(shooter_distance(frame, play.shooter_id))
        events.append(play.event_id)
        margins.append(play.score_margin_at_start)
        shot_frames.append(idx)
    if not rows:
        raise ValueError(f"no qualifying shots for mode {mode!r} and team {team!r}")
    return ShotChartSet(np.array(rows), np.array(outcomes, dtype=int), np.array(deltas, dtype=float),
                        events, mode, team, np.array(margins, dtype=float), shot_frames)


# ---------------------------------------------------------------------------
# categories


def categorize_shot(delta: float) -> str:
    if delta < 0 or math.isnan(delta):
        raise ValueError(f"shot distance must be >= 0, got {delta}")
    if delta < 6:
        return "short"
    if delta < 22:
        return "mid_range"
    return "three_points"


def categorize_margin(margin: float) -> str:
    if margin < 0:
        raise ValueError(f"margin must be >= 0 (take the absolute value first), got {margin}")
    if margin <= 5:
        return "small"
    if margin <= 10:
        return "medium"
    if margin <= 15:
        return "large"
    return "huge"


def duration_split(play: Play, cutoff: float = 12.5) -> str:
    return "short" if play.duration <= cutoff else "long"


def write_matrix_csv(path, matrix, ids, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + list(columns))
        for rid, row in zip(ids, np.asarray(matrix)):
            w.writerow([rid] + [repr(float(v)) for v in row])


def movement_columns(play: Play) -> list:
    return [f"{t}_{pid}_{axis}" for t, pid in play.frames[0].roster() for axis in ("x", "y")]


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
