"""Command-line entry points: run experiments, analyze traces, compare turns.

Exit codes: 0 success, 2 usage or configuration error, 3 internal
invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .errors import InvalidConfigError
from . import metrics
from .sim import SimConfig, TraceLog, run

USAGE_ERROR = 2
INTERNAL_ERROR = 3


def load_config(path: str | None) -> SimConfig:
    if path is None:
        return SimConfig()
    try:
        with open(path) as fp:
            doc = yaml.safe_load(fp) or {}
    except FileNotFoundError:
        raise InvalidConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise InvalidConfigError(f"config file is not valid YAML: {exc}")
    if not isinstance(doc, dict):
        raise InvalidConfigError("config file must hold a mapping")
    return SimConfig.from_dict(doc)


def _apply_overrides(cfg: SimConfig, args) -> SimConfig:
    fields = {}
    if getattr(args, "seed", None) is not None:
        fields["seed"] = args.seed
    if getattr(args, "no_left_turns", False):
        fields["allow_left_turns"] = False
    if getattr(args, "topology", None) is not None:
        fields["topology"] = args.topology
    cfg = replace(cfg, **fields) if fields else cfg
    cfg.validate()
    return cfg


def _write_run_outputs(trace: TraceLog, out: Path, seed: int, qp_dump=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fp:
        trace.to_csv(fp)
    with open(out / "summary.json", "w") as fp:
        metrics.write_summary_json(trace, fp, extra={"seed": seed})
    if qp_dump is not None:
        with open(out / "qp_dump.jsonl", "w") as fp:
            for entry in qp_dump:
                fp.write(json.dumps(entry, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    qp_dump = [] if args.qp_dump else None
    trace = run(cfg, qp_dump=qp_dump)
    out = Path(args.out)
    _write_run_outputs(trace, out, cfg.seed, qp_dump)
    s = metrics.summary(trace)
    print(f"seed {cfg.seed}: {trace.completed} completed in {trace.final_tick} ticks, "
          f"avg speed {s['avg_speed_kmh']:.1f} km/h, "
          f"violations {s['violations']}, outputs in {out}")
    return 0


def cmd_analyze(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise InvalidConfigError(f"trace file not found: {path}")
    with open(path) as fp:
        trace = TraceLog.from_csv(fp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "series.csv", "w", newline="") as fp:
        metrics.write_series_csv(trace, fp)
    with open(out / "cells.csv", "w", newline="") as fp:
        metrics.write_cells_csv(trace, fp)
    with open(out / "summary.json", "w") as fp:
        metrics.write_summary_json(trace, fp)
    s = metrics.summary(trace)
    print(f"{s['samples']} samples, {s['completed']} completed vehicles, "
          f"metrics in {out}")
    return 0


def cmd_compare_turns(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    seeds = args.seeds
    if not seeds:
        raise InvalidConfigError("compare-turns needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise InvalidConfigError("seeds must be distinct")
    out = Path(args.out)
    report = {"seeds": [], "pooled": {}}
    pooled = {}
    for variant, allow in (("left_allowed", True), ("no_left", False)):
        pooled[variant] = {"v_sum": 0.0, "u_sum": 0.0, "n": 0,
                           "min_distance_m": None, "violations": 0,
                           "rerouted": 0, "completed": 0}
    for seed in seeds:
        entry = {"seed": seed}
        for variant, allow in (("left_allowed", True), ("no_left", False)):
            vcfg = replace(cfg, seed=seed, allow_left_turns=allow)
            trace = run(vcfg)
            vdir = out / f"seed{seed}" / variant
            _write_run_outputs(trace, vdir, seed)
            s = metrics.summary(trace)
            entry[variant] = s
            agg = pooled[variant]
            agg["v_sum"] += s["avg_speed_kmh"] * s["samples"]
            agg["u_sum"] += s["avg_accel_ms2"] * s["samples"]
            agg["n"] += s["samples"]
            agg["violations"] += s["violations"]
            agg["rerouted"] += trace.rerouted
            agg["completed"] += trace.completed
            d = s["min_distance_m"]
            if d is not None:
                cur = agg["min_distance_m"]
                agg["min_distance_m"] = d if cur is None else min(cur, d)
        entry["delta_speed_kmh"] = (entry["no_left"]["avg_speed_kmh"]
                                    - entry["left_allowed"]["avg_speed_kmh"])
        entry["delta_accel_ms2"] = (entry["no_left"]["avg_accel_ms2"]
                                    - entry["left_allowed"]["avg_accel_ms2"])
        report["seeds"].append(entry)
    for variant in pooled:
        agg = pooled[variant]
        report["pooled"][variant] = {
            "avg_speed_kmh": agg["v_sum"] / agg["n"],
            "avg_accel_ms2": agg["u_sum"] / agg["n"],
            "samples": agg["n"],
            "completed": agg["completed"],
            "violations": agg["violations"],
            "rerouted": agg["rerouted"],
            "min_distance_m": agg["min_distance_m"],
        }
    report["pooled"]["delta_speed_kmh"] = (
        report["pooled"]["no_left"]["avg_speed_kmh"]
        - report["pooled"]["left_allowed"]["avg_speed_kmh"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.json", "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    p = report["pooled"]
    print(f"{len(seeds)} seed pairs: left {p['left_allowed']['avg_speed_kmh']:.2f} km/h "
          f"vs no-left {p['no_left']['avg_speed_kmh']:.2f} km/h "
          f"(delta {p['delta_speed_kmh']:+.2f}), report in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crossflow",
                                 description="decentralized intersection traffic simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one seeded simulation")
    p_run.add_argument("--config", help="YAML configuration file")
    p_run.add_argument("--seed", type=int, help="override the RNG seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--no-left-turns", action="store_true",
                       help="forbid left turns at intersections")
    p_run.add_argument("--topology", help="auction topology: complete or disk:<radius>")
    p_run.add_argument("--qp-dump", action="store_true",
                       help="write per-solve QP diagnostics (qp_dump.jsonl)")
    p_run.set_defaults(fn=cmd_run)

    p_an = sub.add_parser("analyze", help="compute metrics files from a stored trace")
    p_an.add_argument("trace", help="trace.csv produced by run")
    p_an.add_argument("--out", default="metrics", help="output directory")
    p_an.set_defaults(fn=cmd_analyze)

    p_cmp = sub.add_parser("compare-turns",
                           help="matched-seed comparison with and without left turns")
    p_cmp.add_argument("--config", help="YAML configuration file")
    p_cmp.add_argument("--seeds", type=int, nargs="+", required=True)
    p_cmp.add_argument("--out", default="compare", help="output directory")
    p_cmp.add_argument("--topology", help="auction topology: complete or disk:<radius>")
    p_cmp.set_defaults(fn=cmd_compare_turns)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - surfaced as internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
