"""Command-line front end: ``tehdr analyze | benchmark | calibrate``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .analysis import analyze, clean_json, write_analysis
from .config import Config, ConfigError
from .data import LoadError, SchemaConfig, load_dataset
from .simbench import calibrate, run_benchmark, write_benchmark

__all__ = ["main", "cmd_analyze", "cmd_benchmark", "cmd_calibrate", "build_parser"]

_STAT = {"max": "max_type", "quad": "quadratic"}


def cmd_analyze(data, schema, config=None, out="analysis", seed=0, stat=None, folds=None,
                alpha=None, top_k=None, workers=1) -> dict:
    cfg = Config.from_json(config) if not isinstance(config, Config) else config
    test = cfg.test
    if stat is not None:
        test = dataclasses.replace(test, statistic=_STAT.get(stat, stat))
    if alpha is not None:
        test = dataclasses.replace(test, alpha=alpha)
    ml = cfg.metalearner if folds is None else dataclasses.replace(cfg.metalearner, folds=folds)
    rk = cfg.ranking if top_k is None else dataclasses.replace(cfg.ranking, top_k=top_k)
    cfg = cfg.replace(test=test, metalearner=ml, ranking=rk)
    dataset = load_dataset(data, SchemaConfig.from_json(schema) if not isinstance(schema, SchemaConfig) else schema)
    result = analyze(dataset, cfg, seed, workers=workers)
    write_analysis(result, out)
    return result["report"]


def cmd_benchmark(config=None, out="benchmark", seed=0, fast=False, workers=1, progress=None):
    cfg = Config.from_json(config) if not isinstance(config, Config) else config
    if fast:
        cfg = cfg.replace(simbench=cfg.simbench.fast())
    report = run_benchmark(cfg, seed, workers, progress=progress)
    write_benchmark(report, out, {"fast": bool(fast)})
    return report


def cmd_calibrate(scenario: int, out, seed: int = 0, target_r2: float | None = None, config=None) -> dict:
    cfg = Config.from_json(config) if not isinstance(config, Config) else config
    sim = cfg.simbench
    r2 = sim.target_r2 if target_r2 is None else target_r2
    cal = calibrate(scenario, seed, r2, sim.n, sim.calib_n, sim.calib_reps)
    record = clean_json(cal.record(sim.multipliers))
    record["seed"] = seed
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tehdr", description="Treatment effect heterogeneity with the DR-learner.")
    sub = parser.add_subparsers(dest="command", required=True)
    default_workers = os.cpu_count() or 1

    a = sub.add_parser("analyze", help="analyze a trial dataset")
    a.add_argument("--data", required=True)
    a.add_argument("--schema", required=True)
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--stat", choices=sorted(_STAT))
    a.add_argument("--folds", type=int)
    a.add_argument("--alpha", type=float)
    a.add_argument("--top-k", type=int)
    a.add_argument("--workers", type=int, default=default_workers)

    b = sub.add_parser("benchmark", help="run the simulation benchmark")
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--fast", action="store_true")
    b.add_argument("--workers", type=int, default=default_workers)

    c = sub.add_parser("calibrate", help="calibrate s, beta1* and beta0 for one scenario")
    c.add_argument("--scenario", type=int, choices=(1, 2, 3, 4), required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--target-r2", type=float)
    c.add_argument("--config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            if args.command == "analyze":
                report = cmd_analyze(args.data, args.schema, args.config, args.out, args.seed, args.stat,
                                     args.folds, args.alpha, args.top_k, args.workers)
                for msg in report["provenance"]["warnings"]:
                    print(f"warning: {msg}", file=sys.stderr)
                gt = report["global_test"]
                print(f"global p = {gt['p_value']:.4g} ({gt['statistic_kind']}); "
                      f"top covariates: {', '.join(report['ranking']['top_k'])}")
            elif args.command == "benchmark":
                cmd_benchmark(args.config, args.out, args.seed, args.fast, args.workers)
                print(f"benchmark written to {args.out}")
            else:
                rec = cmd_calibrate(args.scenario, args.out, args.seed, args.target_r2, args.config)
                print(f"s = {rec['s']:.4g}, beta1* = {rec['beta1_star']:.4g}")
        except (LoadError, ConfigError, ValueError, RuntimeError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    if args.command != "analyze":
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
