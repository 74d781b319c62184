"""``hidalgo-id`` command line: simulate, estimate and the two tracking analyses.

Every command writes only inside ``--out`` and finishes by writing
``manifest.json``, which lists each output file with its SHA-256. Chain
``i`` of a run seeded with ``--seed s`` uses ``SeedSequence([s, i])``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, ingest, posterior
from .estimator import Hidalgo
from .neighbors import read_dataset, write_adjacency, write_dataset, write_mu
from .synth import generate, load_specs, multi_manifold

PRIORS = ("plain", "truncated", "spike", "repulsive")
JOBS_ENV = "HIDALGO_JOBS"


class CliError(Exception):
    pass


def _fmt(v) -> str:
    return repr(float(v))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class OutputDir:
    """Collects the files a command writes and signs them in a manifest."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name) -> Path:
        target = (self.root / name).resolve()
        if self.root not in target.parents:
            raise CliError(f"refusing to write outside --out: {name}")
        target.parent.mkdir(parents=True, exist_ok=True)
        rel = target.relative_to(self.root).as_posix()
        if rel not in self.files:
            self.files.append(rel)
        return target

    def write_csv(self, name, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def write_json(self, name, payload) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")

    def finalize(self, command, config, inputs, seed=None) -> Path:
        manifest = {
            "command": command,
            "tool_version": __version__,
            "seed": seed,
            "config": config,
            "inputs": {Path(p).name: sha256_file(p) for p in inputs},
            "outputs": [{"path": f, "sha256": sha256_file(self.root / f)} for f in sorted(self.files)],
        }
        target = self.root / "manifest.json"
        with open(target, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return target


def verify_manifest(path) -> list:
    """Names of outputs whose checksum no longer matches (empty when all match)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as fh:
        manifest = json.load(fh)
    bad = []
    for entry in manifest["outputs"]:
        target = path.parent / entry["path"]
        if not target.exists() or sha256_file(target) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


# ---------------------------------------------------------------------------
# argument types


def _int_at_least(flag, lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"{flag} must be >= {lo}, got {v}")
        return v
    return parse


def _zeta(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--zeta expects a number, got {text!r}") from None
    if not 0.5 < v < 1:
        raise argparse.ArgumentTypeError(f"--zeta must lie in (0.5, 1), got {v}")
    return v


def _k_range(text):
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--K-scan expects a..b, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"--K-scan needs 1 <= a <= b, got {text!r}")
    return list(range(lo, hi + 1))


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"{JOBS_ENV}={raw!r} is not an integer") from None


def _add_mcmc_flags(p, K_default=2):
    p.add_argument("--K", type=_int_at_least("--K", 1), default=K_default, help="mixture components")
    p.add_argument("--prior", choices=PRIORS, default="plain")
    p.add_argument("--q", type=_int_at_least("--q", 1), default=3, help="neighbourhood size")
    p.add_argument("--zeta", type=_zeta, default=0.8)
    p.add_argument("--sample-zeta", action="store_true", help="sample zeta instead of fixing it")
    p.add_argument("--no-adjacency", action="store_true", help="drop the neighbourhood term")
    p.add_argument("--sweeps", type=_int_at_least("--sweeps", 2), default=2000)
    p.add_argument("--burn-in", type=_int_at_least("--burn-in", 0), default=1000)
    p.add_argument("--thin", type=_int_at_least("--thin", 1), default=1)
    p.add_argument("--seed", type=_int_at_least("--seed", 0), default=0)
    p.add_argument("--chains", type=_int_at_least("--chains", 1), default=1)
    p.add_argument("--jobs", type=_int_at_least("--jobs", 1), default=None,
                   help=f"worker threads (default: ${JOBS_ENV} or 1)")
    p.add_argument("--loss", choices=("binder", "vi"), default="binder", help="point-partition loss")
    p.add_argument("--jitter", action="store_true", help="break duplicate points with 1e-8 noise")


def _check_mcmc(args):
    if args.burn_in >= args.sweeps:
        raise CliError(f"--burn-in ({args.burn_in}) must be smaller than --sweeps ({args.sweeps})")
    if args.jobs is None:
        args.jobs = _default_jobs()


def _mcmc_config(args, K=None) -> dict:
    return {
        "K": K if K is not None else args.K, "prior": args.prior, "q": args.q, "zeta": args.zeta,
        "sample_zeta": args.sample_zeta, "adjacency": not args.no_adjacency, "sweeps": args.sweeps,
        "burn_in": args.burn_in, "thin": args.thin, "chains": args.chains, "loss": args.loss,
        "jitter": args.jitter,
    }


def _estimator(args, K=None, n_jobs=None) -> Hidalgo:
    return Hidalgo(
        n_components=K if K is not None else args.K, prior=args.prior, q=args.q, zeta=args.zeta,
        sample_zeta=args.sample_zeta, adjacency=not args.no_adjacency, n_sweeps=args.sweeps,
        burn_in=args.burn_in, thin=args.thin, n_chains=args.chains,
        n_jobs=args.jobs if n_jobs is None else n_jobs, partition_loss=args.loss,
        jitter=args.jitter, random_state=args.seed,
    )


# ---------------------------------------------------------------------------
# shared writers


def _write_trace(out: OutputDir, prefix, trace):
    K = trace.K
    header = ["sweep", "log_posterior"] + [f"d_{k + 1}" for k in range(K)] + [f"p_{k + 1}" for k in range(K)] + ["zeta"]
    rows = (
        [int(s), _fmt(lp)] + [_fmt(v) for v in d] + [_fmt(v) for v in p] + [_fmt(zt)]
        for s, lp, d, p, zt in zip(trace.sweeps, trace.log_posterior, trace.d, trace.p, trace.zeta)
    )
    out.write_csv(f"{prefix}trace.csv", header, rows)
    # labels exported 1-based
    out.write_csv(f"{prefix}z.csv", ["sweep"] + [f"z_{i + 1}" for i in range(trace.N)],
                  ([int(s)] + [int(v) + 1 for v in z] for s, z in zip(trace.sweeps, trace.z)))


def _write_estimates(out: OutputDir, prefix, model: Hidalgo, ids, row_name="id", psm=True):
    out.write_csv(f"{prefix}id_estimates.csv", [row_name, "mean_id", "median_id", "lower", "upper"],
                  ([rid, _fmt(a), _fmt(b), _fmt(lo), _fmt(hi)]
                   for rid, a, b, (lo, hi) in zip(ids, model.id_mean_, model.id_median_, model.id_credible_)))
    out.write_csv(f"{prefix}partition.csv", [row_name, "label"],
                  ([rid, int(v) + 1] for rid, v in zip(ids, model.labels_)))
    if psm:
        order = posterior.heatmap_order(model.psm_)
        out.write_csv(f"{prefix}heatmap_order.csv", ["position", row_name],
                      ([pos + 1, ids[i]] for pos, i in enumerate(order)))
        ordered = model.psm_[np.ix_(order, order)]
        out.write_csv(f"{prefix}psm_ordered.csv", [row_name] + [str(ids[i]) for i in order],
                      ([ids[i]] + [_fmt(v) for v in row] for i, row in zip(order, ordered)))


def _run_pipeline(out, prefix, X, args, ids, K=None, row_name="id", psm=True, n_jobs=None):
    model = _estimator(args, K, n_jobs).fit(X)
    for c, trace in enumerate(model.traces_):
        _write_trace(out, f"{prefix}chain{c + 1}_", trace)
    _write_estimates(out, prefix, model, ids, row_name, psm)
    return model


def _trace_checksums(model) -> list:
    return [t.checksum() for t in model.traces_]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    try:
        specs = load_specs(args.spec)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{args.spec}: {exc}") from None
    if len(specs) == 1:
        data, labels = generate(specs[0])
    else:
        data, labels = multi_manifold(specs, args.min_ratio)
    out = OutputDir(args.out)
    write_dataset(out.path("dataset.csv"), data)
    with open(out.path("labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        w.writerows([rid, int(v)] for rid, v in zip(data.ids, labels))
    out.finalize("simulate", {"manifolds": [s.to_dict() for s in specs], "min_ratio": args.min_ratio},
                 [args.spec], seed=[s.seed for s in specs])
    return 0


def cmd_estimate(args) -> int:
    _check_mcmc(args)
    data = read_dataset(args.data)
    out = OutputDir(args.out)
    X = data.points
    config = _mcmc_config(args)
    extra = {}
    if args.K_scan:
        models = {}
        for K in args.K_scan:
            models[K] = _run_pipeline(out, f"K{K}/", X, args, data.ids, K=K, psm=False)
        K_star, table = posterior.select_K({K: m.trace_ for K, m in models.items()})
        out.write_json("k_scan.json", {"K_star": K_star, "mean_log_posterior": {str(k): v for k, v in table.items()}})
        model = models[K_star]
        _write_estimates(out, "", model, data.ids, psm=not args.no_psm)
        config["K"] = K_star
        config["K_scan"] = args.K_scan
        extra = {str(K): _trace_checksums(m) for K, m in models.items()}
    else:
        model = _run_pipeline(out, "", X, args, data.ids, psm=not args.no_psm)
        extra = {str(args.K): _trace_checksums(model)}
    write_mu(out.path("mu.csv"), model.mu_, data.ids)
    write_adjacency(out.path("adjacency.csv"), model.adjacency_, data.ids)
    try:
        clusters, G, table = posterior.kmeans_id_clusters(model.id_median_)
        out.write_csv("id_clusters.csv", ["id", "group"], ([rid, int(g) + 1] for rid, g in zip(data.ids, clusters)))
        out.write_json("id_clusters.json", {"G": G, "table": table})
    except (posterior.DegenerateDataError, ValueError) as exc:
        out.write_json("id_clusters.json", {"G": None, "reason": str(exc)})
    out.write_json("config.json", {
        "cli": config,
        "chains": [cfg.to_dict() for cfg in model.sampler_configs(X.shape[1])],
        "trace_checksums": extra,
        "manifest": "manifest.json",
    })
    out.finalize("estimate", config, [args.data], seed=args.seed)
    return 0


def _load_tracking(args):
    with open(args.tracking, newline="") as fh:
        frames = ingest.parse_tracking_csv(fh)
    with open(args.pbp, newline="") as fh:
        pbp = ingest.parse_pbp_csv(fh)
    plays = ingest.build_plays(frames, pbp)
    if args.game is not None:
        plays = [p for p in plays if p.game_id == args.game]
        if not plays:
            raise CliError(f"--game {args.game!r} matches no plays")
    track_keys = {(p.game_id, p.event_id) for p in plays}
    matched = {k for k in track_keys if k in pbp or ("", k[1]) in pbp}
    unmatched_tracking = sorted(k[1] for k in track_keys - matched)
    pbp_events = {k[1] for k in pbp}
    unmatched_pbp = sorted(pbp_events - {k[1] for k in track_keys})
    if unmatched_tracking or unmatched_pbp:
        warnings.warn(f"unmatched event ids: tracking-only {unmatched_tracking}, play-by-play-only {unmatched_pbp}",
                      ingest.TrackingWarning, stacklevel=2)
    plays = [p for p in plays if (p.game_id, p.event_id) in matched]
    return plays, pbp, {"tracking_only": unmatched_tracking, "pbp_only": unmatched_pbp}


def _movement_rows(play, features):
    if features == "xy":
        return ingest.movement_matrix(play), ingest.movement_columns(play)
    speed, angle = ingest.speed_angle(play)
    cols = [f"{t}_{pid}_{features}" for t, pid in play.frames[0].roster()]
    return (speed if features == "speed" else angle), cols


def cmd_analyze_movement(args) -> int:
    _check_mcmc(args)
    plays, _, unmatched = _load_tracking(args)
    if args.play:
        wanted = set(args.play)
        plays = [p for p in plays if p.event_id in wanted]
        missing = sorted(wanted - {p.event_id for p in plays})
        if missing:
            unmatched["requested_missing"] = missing
    warnings.warn("consecutive frames are autocorrelated; the ID estimates treat them as independent",
                  ingest.TrackingWarning, stacklevel=2)
    prepared, skipped = [], []
    for play in plays:
        name = f"play_{play.event_id}" + (f"_{play.segment}" if play.segment else "")
        try:
            window = ingest.offensive_half_filter(ingest.downsample(play, args.downsample))
            X, cols = _movement_rows(window, args.features)
            if X.shape[0] < 3:
                raise ValueError(f"{X.shape[0]} rows, need at least 3")
            prepared.append((name, play, window, X, cols))
        except ValueError as exc:
            skipped.append({"play": name, "reason": str(exc)})
    # threads over plays; chains inside each play stay sequential
    def fit(item):
        try:
            return _estimator(args, n_jobs=1).fit(item[3])
        except ValueError as exc:
            return exc
    if args.jobs > 1 and len(prepared) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            fits = list(pool.map(fit, prepared))
    else:
        fits = [fit(item) for item in prepared]
    out = OutputDir(args.out)
    analysed = []
    for (name, play, window, X, cols), model in zip(prepared, fits):
        if isinstance(model, Exception):
            skipped.append({"play": name, "reason": str(model)})
            continue
        frames = window.frames if args.features == "xy" else window.frames[:-1]
        ids = list(range(1, X.shape[0] + 1))
        ingest.write_matrix_csv(out.path(f"{name}/matrix.csv"), X, ids, cols)
        out.write_json(f"{name}/matrix.json", {"features": args.features, "D": X.shape[1], "rows": X.shape[0],
                                               "manifest": "manifest.json"})
        out.write_csv(f"{name}/id_curve.csv",
                      ["frame", "frame_index", "timestamp", "mean_id", "median_id", "lower", "upper"],
                      ([i + 1, f.frame_index, _fmt(f.timestamp), _fmt(a), _fmt(b), _fmt(lo), _fmt(hi)]
                       for i, (f, a, b, (lo, hi)) in enumerate(zip(frames, model.id_mean_, model.id_median_,
                                                                   model.id_credible_))))
        _write_estimates(out, f"{name}/", model, ids, row_name="frame")
        for c, trace in enumerate(model.traces_):
            _write_trace(out, f"{name}/chain{c + 1}_", trace)
        entry = {"play": name, "event_id": play.event_id, "frames": len(window.frames), "rows": int(X.shape[0]),
                 "outcome": play.outcome, "duration": window.duration,
                 "duration_class": ingest.duration_split(window),
                 "trace_checksums": _trace_checksums(model)}
        if play.outcome in ingest.SHOT_OUTCOMES:
            try:
                delta = ingest.shooter_distance(play.frames[ingest.shot_moment(play)], play.shooter_id)
                entry["shot_distance"] = None if np.isnan(delta) else delta
                entry["shot_class"] = None if np.isnan(delta) else ingest.categorize_shot(delta)
            except ingest.FlatTrajectory as exc:
                entry["shot_class"] = None
                entry["shot_note"] = str(exc)
        analysed.append(entry)
    if not analysed:
        raise CliError(f"no play could be analysed: {skipped or 'no matched plays'}")
    out.write_json("summary.json", {"plays": analysed, "skipped": skipped, "unmatched": unmatched,
                                    "autocorrelation_warning": True, "manifest": "manifest.json"})
    config = dict(_mcmc_config(args), features=args.features, downsample=args.downsample,
                  game=args.game, play=args.play)
    out.finalize("analyze-movement", config, [args.tracking, args.pbp], seed=args.seed)
    return 0


def _game_results(pbp, team) -> dict:
    """Per game, whether ``team`` won (final score = row with the largest total)."""
    results = {}
    by_game = {}
    for (game, _), rec in pbp.items():
        best = by_game.get(game)
        if best is None or rec.score_home + rec.score_away > best.score_home + best.score_away:
            by_game[game] = rec
    for game, rec in by_game.items():
        if rec.home_team is None:
            raise CliError("--group-by winner needs a home_team column in the play-by-play file")
        home_won = rec.score_home > rec.score_away
        results[game] = home_won if rec.home_team == team else not home_won
    return results


def cmd_analyze_shotcharts(args) -> int:
    _check_mcmc(args)
    plays, pbp, unmatched = _load_tracking(args)
    games = sorted({p.game_id for p in plays})
    charts = []
    for game in games:
        try:
            charts.append((game, ingest.build_shot_charts([p for p in plays if p.game_id == game], args.mode, args.team)))
        except ValueError as exc:
            if len(games) == 1:
                raise CliError(f"--mode {args.mode} / --team {args.team}: {exc}") from None
    if not charts:
        raise CliError(f"--mode {args.mode} / --team {args.team}: no qualifying shots in any game")
    X = np.vstack([c.matrix for _, c in charts])
    outcomes = np.concatenate([c.outcomes for _, c in charts])
    deltas = np.concatenate([c.shooter_distance for _, c in charts])
    margins = np.concatenate([c.margins for _, c in charts])
    row_games = [g for g, c in charts for _ in c.event_ids]
    ids = [f"{g}:{e}" if len(charts) > 1 else e for g, c in charts for e in c.event_ids]
    if X.shape[0] < 3:
        raise CliError(f"only {X.shape[0]} qualifying shots; at least 3 are needed")

    groupings = {}
    for key in args.group_by:
        if key == "outcome":
            groupings[key] = (["missed", "made"], ["made" if o else "missed" for o in outcomes])
        elif key == "margin":
            groupings[key] = (list(ingest.MARGIN_BANDS), [ingest.categorize_margin(m) for m in margins])
        elif key == "shot":
            groupings[key] = (list(ingest.SHOT_CLASSES),
                              [None if np.isnan(d) else ingest.categorize_shot(d) for d in deltas])
        elif key == "winner":
            won = _game_results(pbp, args.team)
            groupings[key] = (["lost", "won"], ["won" if won[g] else "lost" for g in row_games])

    out = OutputDir(args.out)
    cols = [f"c{j + 1}" for j in range(X.shape[1])]
    ingest.write_matrix_csv(out.path("shot_chart.csv"), X, ids, cols)
    meta = {"mode": args.mode, "team": args.team, "D": int(X.shape[1]), "games": row_games, "event_ids": ids,
            "outcomes": [int(v) for v in outcomes],
            "shooter_distance": [None if np.isnan(v) else float(v) for v in deltas],
            "score_margin": [float(v) for v in margins], "manifest": "manifest.json"}
    meta.update({f"{k}_category": labels for k, (_, labels) in groupings.items()})
    out.write_json("shot_chart.json", meta)

    model = _run_pipeline(out, "", X, args, ids)
    out.write_csv("success_by_cluster.csv", ["cluster", "n", "made", "proportion"],
                  ([r["cluster"] + 1, r["n"], r["made"], _fmt(r["proportion"])]
                   for r in posterior.success_by_cluster(model.labels_, outcomes)))
    cat_rows, tests = [], {}
    for key, (order, labels) in groupings.items():
        groups = {c: model.id_median_[[lab == c for lab in labels]] for c in order}
        for c in order:
            vals = groups[c]
            cat_rows.append([key, c, vals.size, _fmt(np.median(vals)) if vals.size else ""])
        tests[key] = posterior.pairwise_greater(groups, order)
    out.write_csv("category_ids.csv", ["grouping", "category", "n", "median_id"], cat_rows)
    out.write_json("mann_whitney.json", {"alternative": "row greater than column", "tests": tests,
                                         "manifest": "manifest.json"})
    out.write_json("summary.json", {"shots": int(X.shape[0]), "unmatched": unmatched,
                                    "trace_checksums": _trace_checksums(model), "manifest": "manifest.json"})
    config = dict(_mcmc_config(args), mode=args.mode, team=args.team, game=args.game, group_by=args.group_by)
    out.finalize("analyze-shotcharts", config, [args.tracking, args.pbp], seed=args.seed)
    return 0


def cmd_verify(args) -> int:
    bad = verify_manifest(args.dir)
    for name in bad:
        print(f"checksum mismatch: {name}", file=sys.stderr)
    return 1 if bad else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hidalgo-id", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample synthetic manifolds from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--min-ratio", type=float, default=5.0, help="required gap as a multiple of the largest scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the mixture to a dataset")
    p.add_argument("data")
    _add_mcmc_flags(p)
    p.add_argument("--K-scan", dest="K_scan", type=_k_range, default=None, metavar="A..B",
                   help="fit every K in A..B and keep the one with the best mean log-posterior")
    p.add_argument("--no-psm", action="store_true", help="skip the N x N co-clustering export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    for name, func, help_ in (
        ("analyze-movement", cmd_analyze_movement, "per-frame IDs of individual plays"),
        ("analyze-shotcharts", cmd_analyze_shotcharts, "IDs of player positions at shot release"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("tracking")
        p.add_argument("pbp")
        p.add_argument("--game", default=None)
        _add_mcmc_flags(p)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        if name == "analyze-movement":
            p.add_argument("--play", action="append", default=None, help="event id (repeatable)")
            p.add_argument("--features", choices=("xy", "speed", "angle"), default="xy")
            p.add_argument("--downsample", type=_int_at_least("--downsample", 1), default=10)
        else:
            p.add_argument("--mode", choices=ingest.SHOT_MODES, required=True)
            p.add_argument("--team", required=True)
            p.add_argument("--group-by", nargs="+", choices=("outcome", "margin", "shot", "winner"),
                           default=["outcome", "margin", "shot"])

    p = sub.add_parser("verify", help="check an output directory against its manifest")
    p.add_argument("dir")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def show(message, category, *_, **__):
        print(f"hidalgo-id {args.command}: warning: {message}", file=sys.stderr)

    with warnings.catch_warnings():
        warnings.showwarning = show
        try:
            return args.func(args)
        except (CliError, ValueError, OSError, KeyError) as exc:
            print(f"hidalgo-id {args.command}: error: {exc}", file=sys.stderr)
            return 1


if __name__ == "__main__":
    sys.exit(main())
