"""Command-line entry point: ``svfi-nbv run | validate | batch``.

Outputs go under ``--out``, or under ``$SVFI_NBV_OUTPUT_ROOT`` when ``--out``
is not given, or under ``./runs``. Every run writes into a fresh directory;
an existing name gets a numeric suffix instead of being overwritten. Files
are assembled in a hidden staging directory and renamed into place, so a
failed run leaves nothing behind.

Exit codes: 0 success, 1 validation failure, 2 config or scene error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, default_config_path, load_config
from .sim import RunLog, run_episode
from .validation import SUITES, format_table, run_suite
from .worldmap import write_snapshot

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "SVFI_NBV_OUTPUT_ROOT"

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2

PLAN_COLUMNS = (
    "iteration", "tick", "t", "kind", "unknown", "free", "occupied", "residual", "covered", "mean_entropy",
    "g_v", "g_c", "g_w", "n_candidates", "sp_x", "sp_y", "sp_z", "sp_nx", "sp_ny", "sp_nz",
)
AGGREGATE_QUANTITIES = ("unknown", "free", "occupied", "residual", "covered", "mean_entropy")


class SceneError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def output_root(out: str | None) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or "runs")


def fresh_path(root: Path, name: str) -> Path:
    """``root/name``, or ``root/name_2``, ``_3``... if taken."""
    path = root / name
    k = 2
    while path.exists():
        path = root / f"{name}_{k}"
        k += 1
    return path


def write_tick_csv(path: Path, log: RunLog) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(log.columns)
        for row in log.ticks:
            w.writerow([_fmt(float(v)) for v in row])


def write_plan_csv(path: Path, log: RunLog) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for rec in log.plans:
            w.writerow([_fmt(rec.get(c, float("nan"))) for c in PLAN_COLUMNS])


def write_run(directory: Path, log: RunLog, cfg: ExperimentConfig) -> None:
    directory.mkdir(parents=True)
    write_tick_csv(directory / "ticks.csv", log)
    write_plan_csv(directory / "plans.csv", log)
    if log.grid is not None:
        write_snapshot(directory / "grid.bin", log.grid)
    record = {"schema_version": SCHEMA_VERSION, **log.summary}
    (directory / "summary.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=float) + "\n")


def _staged(root: Path, name: str, fill) -> Path:
    """Build outputs in a hidden directory under ``root``, then move them to a fresh name."""
    root.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=root))
    try:
        fill(stage / "out")
        final = fresh_path(root, name)
        os.rename(stage / "out", final)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return final


def _error(kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return EXIT_CONFIG


def _episode(cfg: ExperimentConfig, seed: int) -> RunLog:
    try:
        return run_episode(cfg, seed=seed)
    except (RuntimeError, ValueError) as exc:
        if "pipe" in str(exc) or "scene" in str(exc):
            raise SceneError(str(exc)) from None
        raise


# --------------------------------------------------------------------------
# aggregation


def normalized_series(log: RunLog, quantity: str, taus: np.ndarray) -> np.ndarray:
    """Step-sampled planning-record values at normalised times; the final census closes the run.

    Voxel counts become fractions of the grid.
    """
    total_t = float(log.summary["sim_time_s"]) or 1.0
    times = [rec["t"] / total_t for rec in log.plans] + [1.0]
    vals = [rec[quantity] for rec in log.plans] + [log.summary["census"][quantity]]
    times, vals = np.asarray(times, dtype=float), np.asarray(vals, dtype=float)
    if quantity != "mean_entropy":
        vals = vals / float(log.summary["voxels"])
    idx = np.searchsorted(times, taus, side="right") - 1
    return vals[np.clip(idx, 0, None)]


def aggregate(logs: list[RunLog], bins: int = 21) -> tuple[list[str], list[list[float]]]:
    taus = np.linspace(0.0, 1.0, bins)
    header = ["t_norm"]
    cols = [taus]
    for q in AGGREGATE_QUANTITIES:
        data = np.stack([normalized_series(log, q, taus) for log in logs])
        header += [f"{q}_mean", f"{q}_min", f"{q}_max"]
        cols += [data.mean(axis=0), data.min(axis=0), data.max(axis=0)]
    rows = [[float(c[i]) for c in cols] for i in range(bins)]
    return header, rows


def write_aggregate(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# --------------------------------------------------------------------------
# commands


def _load(path) -> ExperimentConfig:
    """A config file, or the name of one shipped with the package (``default``, ``three_pipe``)."""
    if path and not Path(path).exists():
        shipped = default_config_path().with_name(f"{path}.yaml")
        if shipped.exists():
            path = shipped
    return load_config(path)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        log = _episode(cfg, seed)
    except ConfigError as exc:
        return _error("config", str(exc))
    except SceneError as exc:
        return _error("scene", str(exc))
    final = _staged(output_root(args.out), f"run_seed{seed}", lambda d: write_run(d, log, cfg))
    print(json.dumps({"output": str(final), "termination": log.summary["termination"], "ticks": log.summary["ticks"]}))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        checks = run_suite(args.suite, seed=args.seed or 0)
    except ValueError as exc:
        return _error("suite", str(exc))
    print(format_table(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VALIDATION


def _trial(payload):
    cfg, seed = payload
    return _episode(cfg, seed)


def run_trials(cfg: ExperimentConfig, seeds: list[int], parallel: bool = False, workers: int | None = None) -> list[RunLog]:
    """One episode per seed, returned in seed order whichever way they were run."""
    jobs = [(cfg, s) for s in seeds]
    if parallel and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_trial, jobs))
    return [_trial(j) for j in jobs]


def cmd_batch(args) -> int:
    if args.trials < 1:
        return _error("config", "--trials must be at least 1")
    try:
        cfg = _load(args.config)
        base = cfg.seed if args.seed is None else args.seed
        seeds = [base + i for i in range(args.trials)]
        logs = run_trials(cfg, seeds, args.parallel, args.workers)
    except ConfigError as exc:
        return _error("config", str(exc))
    except SceneError as exc:
        return _error("scene", str(exc))

    def fill(d: Path):
        d.mkdir(parents=True)
        for s, log in zip(seeds, logs):
            write_run(d / f"trial_seed{s}", log, cfg)
        header, rows = aggregate(logs, args.bins)
        write_aggregate(d / "aggregate.csv", header, rows)
        summary = {"schema_version": SCHEMA_VERSION, "seeds": seeds, "trials": [log.summary for log in logs]}
        (d / "batch.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")

    final = _staged(output_root(args.out), f"batch_seed{base}_k{args.trials}", fill)
    print(json.dumps({"output": str(final), "terminations": [log.summary["termination"] for log in logs]}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="svfi-nbv",
        description="Chance-constrained whole-body control with coverage-first next-best-view planning.",
        epilog=f"Output root: --out, else ${OUTPUT_ROOT_ENV}, else ./runs. Exit codes: 0 ok, 1 validation failure, 2 config/scene error.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one episode and write tick/plan CSVs, a grid snapshot and a summary")
    r.add_argument("--config", help="YAML experiment config (defaults shipped with the package)")
    r.add_argument("--seed", type=int, help="episode seed (default: the config's seed)")
    r.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="run an oracle suite and print a pass/fail table")
    v.add_argument("--suite", required=True, choices=SUITES)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("batch", help="run seeded trials and write per-trial outputs plus an aggregate CSV")
    b.add_argument("--config")
    b.add_argument("--trials", type=int, default=5, help="number of trials, seeds seed..seed+k-1")
    b.add_argument("--seed", type=int, help="first seed (default: the config's seed)")
    b.add_argument("--parallel", action="store_true", help="run trials in worker processes")
    b.add_argument("--workers", type=int, help="worker processes for --parallel (default: CPU count)")
    b.add_argument("--bins", type=int, default=21, help="normalised-time samples in the aggregate")
    b.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
