"""Command-line entry point: ``vpmeta <command> [options]``.

Commands
--------
gen-traces   write a deterministic synthetic cohort as trace CSVs
train-meta   meta-train direction and prefetch-angle models
simulate     replay every trace through the streaming loop
evaluate     compare adaptive runs against the frozen global model
flops        print per-tick training cost and battery budget

Exit codes: 0 success, 2 configuration error, 3 data or IO error,
4 non-finite parameters.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import kernels, sim
from . import metrics as mt
from . import traces as tr
from .config import RunConfig, apply_overrides, emit_config, load_config
from .errors import ConfigError, DataError, EmptyRecords, NumericError, VPMetaError
from .iofmt import atomic_write_text
from .meta import build_vd_tasks, reptile_train, train_meta_pair
from .seqmodel import load_params, save_params

log = logging.getLogger("vpmeta")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

BASELINE_MODE = sim.FROZEN
BASELINE_METHODS = ("ecls", "cub360")


# --- helpers -------------------------------------------------------------------

def _map(fn, jobs, workers):
    """Run ``fn`` over ``jobs`` with at most ``workers`` processes, keeping order."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _column_map(cfg):
    if cfg.data.column_map == "none":
        return None
    if cfg.data.column_map == "dataset":
        return tr.DATASET_COLUMN_MAP
    raise ConfigError(f"data.column_map must be 'none' or 'dataset', got {cfg.data.column_map!r}")


def _load_traces(cfg):
    directory = cfg.traces_dir()
    if not directory.is_dir():
        raise DataError(f"trace directory {directory} does not exist")
    traces = tr.load_trace_dir(directory, cfg.data.tick_seconds, _column_map(cfg))
    if not traces:
        raise DataError(f"no trace CSVs in {directory}")
    return traces


def _by_video(traces):
    groups = defaultdict(list)
    for t in traces:
        groups[t.video_id].append(t)
    return dict(sorted(groups.items(), key=lambda kv: mt.id_sort_key(kv[0])))


def _checkpoint_stem(cfg, role, user_id, video_id):
    if cfg.train.leave_one_out or role == "own":
        return cfg.checkpoints_dir() / f"{role}_user-{user_id}_video-{video_id}"
    return cfg.checkpoints_dir() / f"{role}_video-{video_id}"


def _load_model(cfg, role, user_id, video_id):
    stem = _checkpoint_stem(cfg, role, user_id, video_id)
    if not stem.with_suffix(".bin").exists():
        raise DataError(f"missing checkpoint {stem}.bin; run train-meta first")
    params = load_params(stem)
    if not params.is_finite():
        raise NumericError(f"non-finite parameters in {stem}.bin")
    return params


def _check_finite(params, what):
    if not params.is_finite():
        raise NumericError(f"non-finite parameters after training {what}")


def params_digest(params):
    return hashlib.sha256(params.values.astype("<f8").tobytes()).hexdigest()


def _grid(cfg):
    if not cfg.sim.tile_mode:
        return None
    return sim.TileGrid(cfg.sim.tile_rows, cfg.sim.tile_cols)


def _records_path(cfg, mode, trace_key):
    user_id, video_id = trace_key
    return cfg.records_dir() / mode / tr.trace_filename(user_id, video_id)


# --- gen-traces ----------------------------------------------------------------

def cohort_counts(cfg):
    c = cfg.cohort
    return {"fixate": c.fixate, "smooth-scan": c.smooth_scan,
            "random-walk": c.random_walk, "regime-switching": c.regime_switching}


def cmd_gen_traces(cfg):
    """Write the synthetic cohort described by ``cfg.cohort``; returns the file paths."""
    c = cfg.cohort
    if c.videos < 1 or sum(cohort_counts(cfg).values()) < 1:
        raise ConfigError("cohort needs at least one video and one user")
    paths = []
    for video in range(1, c.videos + 1):
        try:
            cohort = tr.synthetic_cohort(
                cohort_counts(cfg), c.duration, cfg.data.tick_seconds, cfg.seed, str(video),
                noise=c.noise, scan_velocity=c.scan_velocity, walk_velocity=c.walk_velocity,
                anchor_spread=c.anchor_spread,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for _, trace in cohort:
            paths.append(tr.write_trace_csv(trace, cfg.traces_dir()))
    log.info("wrote %d traces to %s", len(paths), cfg.traces_dir())
    return paths


# --- train-meta ----------------------------------------------------------------

def _train_job(job):
    cfg, video_traces, exclusion = job
    video_id = video_traces[0].video_id
    what = f"video {video_id}" + (f" excluding user {exclusion[0]}" if exclusion else "")
    pair = train_meta_pair(video_traces, cfg.vd_arch(), cfg.pa_arch(), cfg.meta, cfg.seed, exclusion)
    _check_finite(pair.vd, "direction model for " + what)
    _check_finite(pair.pa, "prefetch-angle model for " + what)
    user_id = exclusion[0] if exclusion else None
    info = {"video": video_id, "excluded_user": user_id, "tasks": len(video_traces) - (1 if exclusion else 0)}
    save_params(_checkpoint_stem(cfg, "vd", user_id, video_id), pair.vd, cfg.seed, {**info, "role": "vd"})
    save_params(_checkpoint_stem(cfg, "pa", user_id, video_id), pair.pa, cfg.seed + 1, {**info, "role": "pa"})
    return user_id, video_id, pair.vd_losses, pair.pa_losses


def _own_model_job(job):
    cfg, trace = job
    pool = build_vd_tasks([trace], None, cfg.data.sequence_length)
    model = reptile_train(pool, cfg.vd_arch(), cfg.meta, cfg.seed)
    _check_finite(model, f"own model of user {trace.user_id}")
    save_params(_checkpoint_stem(cfg, "own", trace.user_id, trace.video_id), model, cfg.seed,
                {"video": trace.video_id, "user": trace.user_id, "role": "own"})
    return trace.key


def cmd_train_meta(cfg):
    """Train checkpoints; returns the list of written checkpoint stems."""
    traces = _load_traces(cfg)
    jobs = []
    for video_traces in _by_video(traces).values():
        if cfg.train.leave_one_out:
            jobs += [(cfg, video_traces, t.key) for t in video_traces]
        else:
            jobs.append((cfg, video_traces, None))
    results = _map(_train_job, jobs, cfg.workers)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "user", "video", "iteration", "mean_inner_loss"])
    stems = []
    for user_id, video_id, vd_losses, pa_losses in results:
        for role, losses in (("vd", vd_losses), ("pa", pa_losses)):
            stems.append(_checkpoint_stem(cfg, role, user_id, video_id))
            for it, loss in enumerate(losses):
                w.writerow([role, "" if user_id is None else user_id, video_id, it, repr(loss)])
    atomic_write_text(cfg.checkpoints_dir() / "train_log.csv", buf.getvalue())

    if cfg.train.per_user_models:
        for key in _map(_own_model_job, [(cfg, t) for t in traces], cfg.workers):
            stems.append(_checkpoint_stem(cfg, "own", *key))
    atomic_write_text(cfg.checkpoints_dir() / "run_config.txt", emit_config(cfg))
    log.info("wrote %d checkpoints to %s", len(stems), cfg.checkpoints_dir())
    return stems


# --- simulate --------------------------------------------------------------------

def _write_records(cfg, mode, key, records, summary):
    path = _records_path(cfg, mode, key)
    atomic_write_text(path, sim.format_records_csv(records))
    atomic_write_text(path.with_suffix(".summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def _summary(key, mode, records, **more):
    m = mt.run_metrics(key[0], records)
    doc = {"user": key[0], "video": key[1], "mode": mode, "mae": m.mae, "mspr": m.mspr,
           "total_prefetched_area": m.total_prefetched_area, "n_ticks": m.n_ticks,
           "missing_tiles": m.missing_tiles}
    doc.update(more)
    return doc


def _simulate_job(job):
    cfg, trace, mode = job
    vd = _load_model(cfg, "vd", trace.user_id, trace.video_id)
    pa = _load_model(cfg, "pa", trace.user_id, trace.video_id)
    records, vd_end, pa_end = sim.simulate_user(
        trace, vd, pa, cfg.viewport, mode, cfg.meta, cfg.sim.partial_window,
        grid=_grid(cfg), return_models=True,
    )
    _check_finite(vd_end, f"online adaptation for user {trace.user_id}")
    _check_finite(pa_end, f"online adaptation for user {trace.user_id}")
    summary = _summary(trace.key, mode, records,
                       vd_sha256=params_digest(vd_end), pa_sha256=params_digest(pa_end))
    return _write_records(cfg, mode, trace.key, records, summary)


def _baseline_job(job):
    cfg, trace, others = job
    full = sim.parse_records_csv(_records_path(cfg, sim.FULL, trace.key).read_text())
    beta = sim.equal_bandwidth_beta(full, cfg.viewport.alpha)
    models = [_load_model(cfg, "own", o.user_id, o.video_id) for o in others]
    out = []
    ecls = sim.simulate_ecls(trace, models, beta, cfg.viewport)
    out.append(_write_records(cfg, "ecls", trace.key, ecls, _summary(trace.key, "ecls", ecls, beta=beta)))
    cub = sim.simulate_cub360(trace, others, models, beta, cfg.sim.knn_k, cfg.viewport)
    out.append(_write_records(cfg, "cub360", trace.key, cub, _summary(trace.key, "cub360", cub, beta=beta)))
    return out


def cmd_simulate(cfg):
    """Simulate every trace in every configured mode; returns written record paths."""
    modes = cfg.modes()
    bad = [m for m in modes if m not in sim.MODES]
    if bad or not modes:
        raise ConfigError(f"sim.modes must be drawn from {sim.MODES}, got {cfg.sim.modes!r}")
    traces = _load_traces(cfg)
    jobs = [(cfg, t, m) for m in modes for t in traces]
    paths = _map(_simulate_job, jobs, cfg.workers)
    if cfg.sim.baselines:
        if sim.FULL not in modes:
            raise ConfigError("baselines need the full mode for their equal-bandwidth angle")
        bjobs = []
        for video_traces in _by_video(traces).values():
            for t in video_traces:
                others = [o for o in video_traces if o.key != t.key]
                if others:
                    bjobs.append((cfg, t, others))
        for out in _map(_baseline_job, bjobs, cfg.workers):
            paths += out
    log.info("wrote %d record streams under %s", len(paths), cfg.records_dir())
    return paths


# --- evaluate --------------------------------------------------------------------

def _read_mode(cfg, mode):
    """``{video: {user: records}}`` for one mode's record directory."""
    out = defaultdict(dict)
    directory = cfg.records_dir() / mode
    for path in sorted(directory.glob("*.csv")):
        user_id, video_id = tr.parse_trace_filename(path.name)
        out[video_id][user_id] = sim.parse_records_csv(path.read_text(encoding="utf-8"))
    return out


def compare_runs(video_id, baseline_runs, method_runs, alpha, baseline_name, method_name):
    """CohortReport of ``method_runs`` against ``baseline_runs`` (both ``{user: records}``).

    Besides the raw comparison, the baseline is re-scored with each user's
    constant equal-bandwidth angle taken from the method's run.
    """
    if not baseline_runs or not method_runs:
        raise EmptyRecords(f"no records for video {video_id}")
    base = [mt.run_metrics(u, r) for u, r in baseline_runs.items()]
    ours = [mt.run_metrics(u, r) for u, r in method_runs.items()]
    mt.match_cohorts(base, ours)
    betas = {u: sim.equal_bandwidth_beta(r, alpha) for u, r in method_runs.items()}
    base_eq = [mt.run_metrics(u, sim.with_constant_beta(baseline_runs[u], betas[u], alpha))
               for u in baseline_runs]
    section = mt.equal_bandwidth_section(base_eq, ours, betas)
    return mt.cohort_report(video_id, base, ours, baseline_name, method_name, section)


def cmd_evaluate(cfg):
    """Write one JSON and CSV report per (video, method) plus ``summary.json``."""
    baseline = _read_mode(cfg, BASELINE_MODE)
    if not baseline:
        raise EmptyRecords(f"no {BASELINE_MODE} records under {cfg.records_dir()}")
    methods = [m for m in (*cfg.modes(), *BASELINE_METHODS)
               if m != BASELINE_MODE and (cfg.records_dir() / m).is_dir()]
    if not methods:
        raise EmptyRecords("no adaptive or baseline records to compare")
    summary = []
    paths = []
    for method in methods:
        runs = _read_mode(cfg, method)
        if set(runs) != set(baseline):
            raise DataError(f"{method} and {BASELINE_MODE} records cover different videos")
        for video_id in sorted(runs, key=mt.id_sort_key):
            rep = compare_runs(video_id, baseline[video_id], runs[video_id], cfg.viewport.alpha,
                               BASELINE_MODE, method)
            stem = cfg.reports_dir() / f"video-{video_id}_{method}"
            atomic_write_text(stem.with_suffix(".json"), rep.to_json())
            atomic_write_text(stem.with_suffix(".csv"), rep.to_csv())
            paths += [stem.with_suffix(".json"), stem.with_suffix(".csv")]
            eq = rep.equal_bandwidth
            summary.append({
                "video": video_id,
                "method": method,
                "users": len(rep.ours),
                "baseline_mae_deg": math.degrees(np.mean([m.mae for m in rep.baseline])),
                "method_mae_deg": math.degrees(np.mean([m.mae for m in rep.ours])),
                "baseline_mspr": float(np.mean([m.mspr for m in rep.baseline])),
                "method_mspr": float(np.mean([m.mspr for m in rep.ours])),
                "baseline_mspr_equal_bw": float(np.mean(list(eq["baseline_mspr"].values()))),
                "iwp": rep.iwp,
                "iwp_equal_bw": eq["iwp"],
            })
    atomic_write_text(cfg.reports_dir() / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(_format_summary(summary))
    return paths


def _format_summary(rows):
    head = f"{'video':>6} {'method':>8} {'MAE base':>9} {'MAE ours':>9} {'MSPR eqbw':>10} {'MSPR ours':>10} {'IWP eqbw':>9}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r['video']:>6} {r['method']:>8} {r['baseline_mae_deg']:9.2f} {r['method_mae_deg']:9.2f} "
            f"{r['baseline_mspr_equal_bw']:10.4f} {r['method_mspr']:10.4f} {100 * r['iwp_equal_bw']:8.2f}%"
        )
    return "\n".join(lines)


# --- flops -----------------------------------------------------------------------

def flops_table(cfg, sequence_length=None):
    """Rows ``(name, S, I, D, flops)`` for the two models and their per-tick total."""
    rows = []
    total = 0
    for name, arch in (("vd", cfg.vd_arch()), ("pa", cfg.pa_arch())):
        if arch.cell != "lstm":
            raise ConfigError(f"{name}: FLOPs table covers LSTM cells only")
        S = arch.sequence_length if sequence_length is None else sequence_length
        if S < 0:
            raise ConfigError("sequence length must be >= 0")
        f = mt.flops_with_sequence_length(arch, S)
        rows.append((name, S, arch.input_dim, arch.hidden_dim, f))
        total += f
    rows.append(("total", None, None, None, total))
    return rows


def cmd_flops(cfg, sequence_length=None):
    rows = flops_table(cfg, sequence_length)
    lines = [f"{'model':<6} {'S':>5} {'I':>4} {'D':>5} {'FLOPs':>14} {'MFLOPs':>10}"]
    for name, S, I, D, f in rows:
        fmt = lambda x: "" if x is None else str(x)  # noqa: E731
        lines.append(f"{name:<6} {fmt(S):>5} {fmt(I):>4} {fmt(D):>5} {f:>14,d} {f / 1e6:>10.4f}")
    total = rows[-1][4]
    fc = cfg.flops
    if total > 0:
        steps = mt.battery_steps(fc.battery_joules, fc.joules_per_flop, total)
        lines.append(f"battery {fc.battery_joules:g} J at {fc.joules_per_flop:g} J/FLOP: "
                     f"{steps:,d} adaptation ticks ({steps:.3e})")
    else:
        lines.append("battery: no training cost per tick")
    text = "\n".join(lines)
    print(text)
    return text


# --- argument parsing ---------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file (key = value lines)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key, e.g. meta.meta_iterations=50")
    common.add_argument("--preset", choices=("simulation", "emulation"), default="simulation",
                        help="defaults to start from before the config file is applied")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--mode", choices=sim.MODES, help="simulate only this adaptation mode")
    common.add_argument("--k", type=int, metavar="N", help="local SGD steps per task in meta-training")
    common.add_argument("--tile-mode", action="store_true", default=None, help="also count 16x16 tiles")
    common.add_argument("--workers", type=int, metavar="N", help="maximum worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vpmeta", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version="vpmeta 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-traces", parents=[common], help="write a synthetic trace cohort")
    sub.add_parser("train-meta", parents=[common], help="meta-train checkpoints")
    sub.add_parser("simulate", parents=[common], help="run the streaming simulation")
    sub.add_parser("evaluate", parents=[common], help="write cohort reports")
    fl = sub.add_parser("flops", parents=[common], help="print FLOPs and battery table")
    fl.add_argument("--sequence-length", type=int, metavar="S", help="override the window length")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def config_from_args(args):
    base = RunConfig.emulation() if args.preset == "emulation" else RunConfig()
    cfg = load_config(args.config, base)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.mode is not None:
        overrides["sim.modes"] = args.mode
    if args.k is not None:
        overrides["meta.local_steps"] = str(args.k)
    if args.tile_mode:
        overrides["sim.tile_mode"] = "true"
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    cfg = apply_overrides(cfg, overrides)
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        log.info("kernel backend: %s", kernels.BACKEND)
        if args.command == "gen-traces":
            cmd_gen_traces(cfg)
        elif args.command == "train-meta":
            cmd_train_meta(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "flops":
            cmd_flops(cfg, args.sequence_length)
        elif args.command == "show-config":
            sys.stdout.write(emit_config(cfg))
    except ConfigError as exc:
        print(f"vpmeta: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"vpmeta: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"vpmeta: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VPMetaError as exc:
        print(f"vpmeta: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
