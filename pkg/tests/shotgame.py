"""Synthetic shot plays in two formation families, written in the tracking schema."""

import csv

import numpy as np

PLAYERS = [("A", f"a{i}") for i in range(1, 6)] + [("B", f"b{i}") for i in range(1, 6)]
HEIGHTS = (3.0, 3.0, 4.0, 6.0, 8.0, 7.0)
SHOT_FRAME = 2


def formations(n_per_group, rng):
    """Team-A layouts: a one-parameter family and a five-parameter family."""
    base1 = np.array([60, 10, 65, 20, 70, 30, 75, 40, 80, 25], dtype=float)
    direction = np.array([1, 0.5, 0.8, -0.2, 0.3, 0.9, -0.6, 0.4, 0.2, -0.7])
    line = base1 + rng.uniform(0, 8, (n_per_group, 1)) * direction
    base2 = np.array([55, 15, 62, 35, 72, 12, 85, 30, 78, 42], dtype=float)
    mixing = rng.standard_normal((5, 10))
    blob = base2 + rng.uniform(-1, 1, (n_per_group, 5)) @ mixing
    return np.vstack([line, blob])


def write_shot_game(directory, n_per_group=15, seed=0, game="G1"):
    """Write tracking.csv and pbp.csv; returns ``{event_id: (made, group)}``."""
    rng = np.random.default_rng(seed)
    layouts = formations(n_per_group, rng)
    n = layouts.shape[0]
    group = np.repeat([0, 1], n_per_group)
    outcomes = rng.integers(0, 2, n)
    margins = rng.integers(0, 25, n)
    defense = rng.uniform([50, 5], [90, 45], (n, 5, 2))
    rows, pbp = [], []
    for s in range(n):
        event = str(s + 1)
        t0 = 10.0 * s
        for f, z in enumerate(HEIGHTS):
            ts = repr(t0 + f / 25.0)
            for k, (team, pid) in enumerate(PLAYERS):
                x, y = (layouts[s, 2 * k], layouts[s, 2 * k + 1]) if team == "A" else defense[s, k - 5]
                rows.append([game, event, f, ts, "player", team, pid, repr(float(x)), repr(float(y)), ""])
            rows.append([game, event, f, ts, "ball", "", "", "80.0", "25.0", repr(z)])
        shooter = f"a{1 + s % 5}"
        home, away = 40 + int(margins[s]), 40
        pbp.append([game, event, "ShotMade" if outcomes[s] else "ShotMissed", shooter, home, away, "A"])
    with open(directory / "tracking.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game_id", "event_id", "frame", "timestamp", "entity_type", "team", "player_id", "x", "y", "z"])
        w.writerows(rows)
    with open(directory / "pbp.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game_id", "event_id", "outcome", "shooter_id", "score_home", "score_away", "home_team"])
        w.writerows(pbp)
    return {str(s + 1): (int(outcomes[s]), int(group[s])) for s in range(n)}
