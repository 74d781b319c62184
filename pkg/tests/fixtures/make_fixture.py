"""Regenerate the scripted tracking game and its expected matrices.

Expected values are computed here from the trajectory formulas with plain
Python scalars, independently of the ingest code.

    python3 tests/fixtures/make_fixture.py
"""

import csv
import json
import math
from pathlib import Path

HERE = Path(__file__).parent
FPS = 25.0
CENTERS = {
    "a2": (60, 10), "a3": (70, 25), "a4": (60, 40), "a5": (80, 15),
    "b1": (65, 12), "b2": (72, 28), "b3": (66, 38), "b4": (82, 20),
    "a1": (55, 25), "b5": (75, 35),
}
PLAYERS = ["a1", "a2", "a3", "a4", "a5", "b1", "b2", "b3", "b4", "b5"]


def wave(pid, f, shift=0.0):
    cx, cy = CENTERS[pid]
    phi = PLAYERS.index(pid) + shift
    return cx + 6 * math.sin(0.02 * f + phi), cy + 4 * math.cos(0.03 * f + phi)


def play1_position(pid, f):
    if pid == "a1":
        if f <= 10:
            return 10 + 3 * f / 10, 10 + 4 * f / 10
        return 13 + 0.05 * (f - 10), 14 + 0.02 * (f - 10)
    if pid == "b5":
        if f <= 20:
            return 85 - f / 10, 30.0
        if f <= 40:
            return 83.0, 30.0
        return 83 + 0.02 * (f - 40), 30 + 0.05 * (f - 40)
    return wave(pid, f)


def shot_z(f, n, rise_at):
    # flat dribble height, one strict ascent after rise_at, then a fall
    apex = n - 4
    if f <= rise_at:
        return 3.0
    if f <= apex:
        return 3.0 + 0.5 * (f - rise_at)
    return 3.0 + 0.5 * (apex - rise_at) - 0.75 * (f - apex)


PLAYS = [
    # event, frames, offense, reflect raw, outcome, shooter, t0, rise_at
    ("1", 240, "A", False, "ShotMade", "a3", 0.0, 220),
    ("2", 100, "B", True, "ShotMissed", "b2", 20.0, 80),
    ("3", 60, "A", False, "Turnover", "", 40.0, None),
    ("4", 80, "A", False, "ShotMissed", "a5", 60.0, 60),
]
PBP = [
    ("1", "ShotMade", "a3", 10, 4),
    ("2", "ShotMissed", "b2", 10, 6),
    ("3", "Turnover", "", 10, 6),
    ("4", "ShotMissed", "a5", 12, 6),
    ("5", "ShotMade", "b1", 12, 8),
]


def normalized(event, pid, f):
    if event == "1":
        return play1_position(pid, f)
    return wave(pid, f, shift=float(event))


def ball(event, f, n, rise_at):
    x = 48 + 37 * f / (n - 1)
    y = 25 + 10 * math.sin(0.05 * f)
    z = 3.0 if rise_at is None else shot_z(f, n, rise_at)
    return x, y, z


def main():
    tracking, expected = [], {}
    for event, n, offense, reflect, outcome, shooter, t0, rise_at in PLAYS:
        raw_frames = []
        for f in range(n):
            ts = t0 + f / FPS
            pos = {}
            for pid in PLAYERS:
                x, y = normalized(event, pid, f)
                pos[pid] = (94 - x, 50 - y) if reflect else (x, y)
            bx, by, bz = ball(event, f, n, rise_at)
            if reflect:
                bx, by = 94 - bx, 50 - by
            # rotate the row order so the parser has to sort
            order = PLAYERS[f % 10:] + PLAYERS[: f % 10]
            for pid in order:
                team = pid[0].upper()
                tracking.append(["G1", event, f, repr(ts), "player", team, pid, repr(pos[pid][0]), repr(pos[pid][1]), ""])
            tracking.append(["G1", event, f, repr(ts), "ball", "", "", repr(bx), repr(by), repr(bz)])
            raw_frames.append(pos)
        # what ingestion must produce: reflected back where needed, players sorted
        rows = []
        for pos in raw_frames:
            row = []
            for pid in PLAYERS:
                x, y = pos[pid]
                row += [94 - x, 50 - y] if reflect else [x, y]
            rows.append(row)
        shot_frame = None if rise_at is None else rise_at + 1
        expected[event] = {"rows": rows, "shot_frame": shot_frame, "shooter": shooter, "outcome": outcome}

    with open(HERE / "tracking.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game_id", "event_id", "frame", "timestamp", "entity_type", "team", "player_id", "x", "y", "z"])
        w.writerows(tracking)
    with open(HERE / "pbp.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "outcome", "shooter_id", "score_home", "score_away", "home_team"])
        w.writerows([list(r) + ["A"] for r in PBP])

    def dump(name, matrix):
        with open(HERE / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerows([[repr(float(v)) for v in row] for row in matrix])

    play1 = expected["1"]["rows"][::10]
    dump("expected_movement_play1.csv", play1)
    speed, angle = [], []
    for r0, r1 in zip(play1, play1[1:]):
        s_row, a_row = [], []
        for j in range(10):
            dx, dy = r1[2 * j] - r0[2 * j], r1[2 * j + 1] - r0[2 * j + 1]
            s = math.sqrt(dy * dy + dx * dx)
            s_row.append(s)
            a_row.append(math.atan2(dy, dx) if s > 0 else 0.0)
        speed.append(s_row)
        angle.append(a_row)
    dump("expected_speed_play1.csv", speed)
    dump("expected_angle_play1.csv", angle)

    hoop = (88.75, 25.0)
    charts = {"two-team": [], "single-attack": [], "single-defense": []}
    meta = {"shot_frames": {}, "delta": {}, "outcomes": []}
    for event in ("1", "4"):
        e = expected[event]
        row = e["rows"][e["shot_frame"]]
        charts["two-team"].append(row)
        charts["single-attack"].append(row[:10])
        j = PLAYERS.index(e["shooter"])
        meta["delta"][event] = math.sqrt((row[2 * j] - hoop[0]) ** 2 + (row[2 * j + 1] - hoop[1]) ** 2)
        meta["outcomes"].append(1 if e["outcome"] == "ShotMade" else 0)
    e = expected["2"]
    charts["single-defense"].append(e["rows"][e["shot_frame"]][:10])
    for mode, rows in charts.items():
        dump(f"expected_shotchart_{mode}_A.csv", rows)
    meta["shot_frames"] = {ev: expected[ev]["shot_frame"] for ev in ("1", "2", "4")}
    with open(HERE / "expected_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
