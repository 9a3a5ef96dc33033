"""Command-line batch driver.

Exit codes: 0 success, 1 comparison outside tolerance, 2 invalid
configuration or arguments, 3 runtime abort (partial outputs are written and
flagged in the metadata).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import resource
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ENGINES, build_spec, jsonable, load, rank_policy, solver_config, sweep_configs, validate
from .oracle import integrate_dense
from .records import RunRecord, read_csv, write_json, _fmt
from .state import DENSE_LIMIT, overlap, reconstruct_dense
from .tdvp import integrate
from .truncation import TruncationState, integrate_truncation

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("lrtdvp")


def _peak_rss_kib() -> int:
    # Linux reports kilobytes
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)


def versions() -> dict:
    return {"lrtdvp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def execute(cfg: dict) -> tuple[RunRecord, np.ndarray | None]:
    """Run one resolved configuration; returns the record and the final dense state if small."""
    spec = build_spec(cfg)
    scfg = solver_config(cfg)
    obs = tuple(spec.observables[n] for n in cfg["observables"])
    engine = cfg["engine"]
    final = None
    if engine == "lrtdvp":
        rec = integrate(spec.state, spec.model, scfg, rank_policy(cfg, spec.state.rank), obs)
        if spec.model.dim <= DENSE_LIMIT:
            final = reconstruct_dense(rec.final_state)
    elif engine == "oracle":
        run = integrate_dense(reconstruct_dense(spec.state), spec.model, scfg, obs)
        rec, final = run.record, run.final
    else:
        b = cfg["baseline"]
        rec = integrate_truncation(TruncationState.from_lowrank(spec.state), spec.model, scfg,
                                   b["dt"], b["eps_max"], obs, b["max_rank"])
        if spec.model.dim <= DENSE_LIMIT:
            final = rec.final_state.dense()
    return rec, final


def run_one(cfg: dict, out_dir: Path, prefix: str) -> dict:
    """Run and write ``prefix.csv``, ``prefix_events.csv``, ``prefix_steps.csv``, ``prefix.json``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    wall = time.perf_counter()
    error = None
    try:
        rec, final = execute(cfg)
    except (MemoryError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        # failures outside the integrators' own abort handling
        rec, final = RunRecord(cfg["engine"]), None
        rec.status, rec.message = "aborted", f"{type(exc).__name__}: {exc}"
        error = rec.message
    wall = time.perf_counter() - wall
    files = {"record": f"{prefix}.csv", "events": f"{prefix}_events.csv", "metadata": f"{prefix}.json"}
    rec.write_csv(out_dir / files["record"])
    rec.write_events_csv(out_dir / files["events"])
    if cfg["output"]["steps"]:
        files["steps"] = f"{prefix}_steps.csv"
        rec.write_steps_csv(out_dir / files["steps"])
    if cfg["output"]["dump_state"] and final is not None:
        files["state"] = f"{prefix}_state.npy"
        np.save(out_dir / files["state"], final)
    meta = {
        "config": jsonable(cfg),
        "versions": versions(),
        "wall_clock_s": wall,
        "peak_rank": rec.max_rank,
        "peak_rss_kib": _peak_rss_kib(),
        "partial": rec.status != "ok",
        "error": error,
        "files": files,
        **rec.summary(),
    }
    write_json(out_dir / files["metadata"], meta)
    return meta


def _sweep_job(args):
    cfg, out_dir, prefix = args
    return run_one(cfg, Path(out_dir), prefix)


def _label(v) -> str:
    s = json.dumps(v) if not isinstance(v, (int, float)) else format(v, "g")
    return "".join(c if c.isalnum() or c in "-+.e" else "_" for c in s)


def run_sweep(cfg: dict, out_dir: Path, workers: int = 1) -> list[dict]:
    """Run every sweep value; results and the summary table follow the value order."""
    sw = cfg["sweep"]
    prefix = cfg["output"]["prefix"]
    name = sw["parameter"].split(".")[-1]
    jobs = [(c, str(out_dir), f"{prefix}_{k:03d}_{name}={_label(v)}")
            for k, (c, v) in enumerate(zip(sweep_configs(cfg), sw["values"]))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metas = list(pool.map(_sweep_job, jobs))
    else:
        metas = [_sweep_job(j) for j in jobs]
    # serialized merge in parameter order
    obs_names = cfg["observables"]
    with open(out_dir / f"{prefix}_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name, "status", "final_rank", "peak_rank", "entropy", *obs_names])
        for v, m in zip(sw["values"], metas):
            final = m.get("final", {})
            w.writerow([v, m["status"], m.get("final_rank"), m["peak_rank"],
                        _fmt(final.get("entropy", math.nan)),
                        *(_fmt(final.get(o, math.nan)) for o in obs_names)])
    write_json(out_dir / f"{prefix}_sweep.json", {
        "config": jsonable(cfg), "versions": versions(), "parameter": sw["parameter"],
        "runs": [{"value": v, "status": m["status"], "message": m["message"], "files": m["files"]}
                 for v, m in zip(sw["values"], metas)],
    })
    return metas


# ---------------------------------------------------------------- compare

def compare_records(a: dict, b: dict, interpolate: bool = False, tol: float | None = None) -> dict:
    """Per-column max absolute deviation of two record tables."""
    ta, tb = a["t"], b["t"]
    same = len(ta) == len(tb) and np.allclose(ta, tb, rtol=0, atol=1e-9 * max(1.0, float(np.max(np.abs(ta)))))
    if not same and not interpolate:
        raise ValueError("time grids differ; pass --interpolate to compare on the first record's grid")
    skip = {"t", "rank", "chi", "trace_dev"}
    cols = [c for c in a if c in b and c not in skip]
    out = {}
    for c in cols:
        va = a[c]
        vb = b[c] if same else np.interp(ta, tb, b[c])
        d = np.abs(va - vb)
        both_nan = np.isnan(va) & np.isnan(vb)
        d = np.where(both_nan, 0.0, d)
        out[c] = float(np.max(d)) if d.size else 0.0
    summary = {"max_abs_diff": out, "interpolated": not same}
    if tol is not None:
        summary["tolerance"] = tol
        summary["pass"] = all(v <= tol for v in out.values())
    return summary


def _state_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + "_state.npy")


# ---------------------------------------------------------------- entry points

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrtdvp", description="Low-rank Lindblad evolution batch driver.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q):
        q.add_argument("config", help="YAML run configuration")
        q.add_argument("--engine", choices=ENGINES, help="override the configured engine")
        q.add_argument("--output-dir", help="override output.dir")
        q.add_argument("--seed", type=int, help="override the configured seed")
        q.add_argument("--workers", type=int, default=1, help="parallel sweep workers")
        q.add_argument("--quiet", action="store_true", help="suppress progress output")

    common(sub.add_parser("run", help="run a configuration (a sweep block runs every value)"))
    common(sub.add_parser("sweep", help="run a configuration that has a sweep block"))
    c = sub.add_parser("compare", help="compare two record CSV files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, help="pass/fail tolerance on every max deviation")
    c.add_argument("--interpolate", action="store_true", help="interpolate b onto a's time grid")
    c.add_argument("--output", help="write the summary JSON here as well")
    c.add_argument("--quiet", action="store_true")
    v = sub.add_parser("validate", help="check a configuration and print it resolved")
    v.add_argument("config")
    v.add_argument("--quiet", action="store_true")
    return p


def _resolve(args) -> dict:
    cfg = load(args.config)
    raw = jsonable(cfg)
    if args.engine:
        raw["engine"] = args.engine
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.output_dir:
        raw["output"]["dir"] = args.output_dir
    return validate(raw)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")

    def say(msg):
        if not args.quiet:
            print(msg)

    if args.command == "compare":
        try:
            a, b = read_csv(args.a), read_csv(args.b)
            summary = compare_records(a, b, args.interpolate, args.tol)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sa, sb = _state_path(Path(args.a)), _state_path(Path(args.b))
        if sa.exists() and sb.exists():
            summary["final_overlap"] = overlap(np.load(sa), np.load(sb))
        text = json.dumps(summary, indent=2, sort_keys=True)
        print(text)
        if args.output:
            Path(args.output).write_text(text)
        return EXIT_MISMATCH if summary.get("pass") is False else EXIT_OK

    try:
        if args.command == "validate":
            cfg = load(args.config)
        else:
            cfg = _resolve(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(json.dumps(jsonable(cfg), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command == "sweep" and cfg["sweep"] is None:
        print("invalid configuration: sweep command needs a 'sweep' block", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg["output"]["dir"])
    if cfg["sweep"] is not None:
        metas = run_sweep(cfg, out_dir, args.workers)
        for v, m in zip(cfg["sweep"]["values"], metas):
            say(f"{cfg['sweep']['parameter']}={v}: {m['status']} peak_rank={m['peak_rank']}")
        return EXIT_ABORT if any(m["status"] != "ok" for m in metas) else EXIT_OK
    meta = run_one(cfg, out_dir, cfg["output"]["prefix"])
    say(f"{meta['engine']}: {meta['status']} t={meta['final_time']} peak_rank={meta['peak_rank']} "
        f"wall={meta['wall_clock_s']:.2f}s -> {out_dir / meta['files']['record']}")
    if meta["status"] != "ok":
        print(f"run aborted: {meta['message']}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
