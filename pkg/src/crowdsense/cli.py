"""Command-line entry point: ``crowdsense <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import COMPLETE, calibrate
from .errors import CrowdsenseError
from .experiments import (
    CONFIG_KEYS,
    build_config,
    parse_config_text,
    parse_value,
    run_setting,
    summary_csv,
    write_outputs,
)
from .payment import compute_payments, load_params_csv
from .population import bne_profile_complete, bne_profile_incomplete, best_response_check, sample_population
from .truth import load_data_csv, run_truth_discovery

log = logging.getLogger("crowdsense")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--setting", choices=["I", "II", "III", "IV"], help="preset simulation setting")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help=f"override one config key (known: {', '.join(CONFIG_KEYS)})")
    p.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    p.add_argument("--trials", type=int, help="trials per sweep point (default 1000)")
    p.add_argument("--out-dir", type=Path, help="directory for CSV/JSON outputs")


def _config(args):
    file_values = parse_config_text(args.config.read_text()) if args.config else {}
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise CrowdsenseError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = parse_value(k.strip(), v)
    overrides.update(setting=args.setting, seed=args.seed, trials=args.trials)
    return build_config(file_values, overrides)


def _population_for(cfg, workers):
    if workers is None:
        workers = cfg.workers[0] if cfg.sweep_param == "tasks" else cfg.sweep_values[0]
    rng = np.random.default_rng(cfg.seed)
    pop = sample_population(workers, cfg.dist, cfg.delta_hi, cfg.cost_bounds, rng)
    return pop, rng


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    pop, rng = _population_for(cfg, args.workers)
    report = calibrate(pop, cfg.dist, cfg.targets, cfg.budget, cfg.scenario,
                       cost_bounds=cfg.cost_bounds, rng=rng, fallback_upper=cfg.fallback_upper)
    text = report.to_json()
    print(text)
    guarantee = "" if report.guarantee_available else " (ratio guarantee unavailable; fallback upper end)"
    print(f"feasible threshold interval: [{report.delta_lower:.6g}, {report.draw_upper:.6g}]{guarantee}",
          file=sys.stderr)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "calibration.json").write_text(text + "\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.out_dir is None:
        raise CrowdsenseError("simulate requires --out-dir")
    log.info("running %d trials x %d points x %d mechanisms", cfg.trials, len(cfg.sweep_values), len(cfg.mechanisms))
    result = run_setting(cfg, jobs=args.jobs)
    csv_path, json_path = write_outputs(result, args.out_dir)
    sys.stdout.write(summary_csv(result.summary))
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    return 0


def cmd_aggregate(args) -> int:
    data = load_data_csv(args.data)
    res = run_truth_discovery(data, tol=args.tol, max_iter=args.max_iter)
    truths = "task_id,truth\n" + "".join(f"{t},{v!r}\n" for t, v in zip(data.tasks, map(float, res.truths)))
    weights = "worker_id,weight\n" + "".join(
        f"{w},{v!r}\n" for w, v in zip(data.participants, map(float, res.weights))
    )
    info = {"iterations": res.iterations, "converged": res.converged,
            "clipped_weights": max(res.clipped) if res.clipped else 0,
            "uniform_fallback": res.uniform_fallback}
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "truths.csv").write_text(truths)
        (args.out_dir / "weights.csv").write_text(weights)
        (args.out_dir / "aggregation.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(truths + "\n" + weights)
    print(json.dumps(info, sort_keys=True), file=sys.stderr)
    return 0 if res.converged else 3


def cmd_pay(args) -> int:
    data = load_data_csv(args.data)
    params = load_params_csv(args.params, budget=args.budget if args.budget is not None else float("inf"))
    record = compute_payments(data, params.worker_ids, params, args.seed, clamp_negative=args.clamp)
    summary = record.summary()
    if args.budget is not None:
        summary["budget"] = args.budget
        summary["within_budget"] = record.total <= args.budget
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        record.write_csv(args.out_dir / "payments.csv")
        (args.out_dir / "payments.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        print("worker_id,reference_id,payment")
        for w, r, p in zip(record.worker_ids, record.references, record.payments):
            print(f"{w},{'' if r is None else r},{float(p)!r}")
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return 0


def cmd_verify_bne(args) -> int:
    cfg = _config(args)
    pop, rng = _population_for(cfg, args.workers)
    report = calibrate(pop, cfg.dist, cfg.targets, cfg.budget, cfg.scenario,
                       cost_bounds=cfg.cost_bounds, rng=rng, fallback_upper=cfg.fallback_upper)
    th = report.thresholds
    if cfg.scenario == COMPLETE:
        profile = bne_profile_complete(pop, th["delta_t"])
    else:
        profile = bne_profile_incomplete(pop, th["delta_l"], th["delta_h"], report.params, cfg.dist)
    ref = cfg.dist.truncated_second_moment(report.ref_second_moment_cap)
    check = best_response_check(pop, profile, report.params, ref, grid_points=args.grid)
    out = {
        "scenario": cfg.scenario,
        "thresholds": th,
        "workers": len(pop),
        "participants": len(profile.participants),
        "conditions_satisfied": report.feasible,
        "max_gain": check.max_gain,
        "violations": [{"worker_id": w, "gain": g} for w, g in check.violations],
        "excluded_with_nonnegative_utility": [{"worker_id": w, "utility": u} for w, u in check.excluded_nonnegative],
        "passed": check.passed,
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "verify_bne.json").write_text(text + "\n")
    return 0 if check.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdsense", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="choose thresholds and payment parameters; print the report")
    _add_config_args(p)
    p.add_argument("--workers", type=int, help="population size (default: first sweep point)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run a Monte-Carlo setting and write CSV + JSON manifest")
    _add_config_args(p)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", help="run CRH truth discovery on a worker_id,task_id,value CSV")
    p.add_argument("data", type=Path)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("pay", help="compute payments for a data CSV and a worker_id,a,b params CSV")
    p.add_argument("data", type=Path)
    p.add_argument("params", type=Path, help="CSV worker_id,a,b; workers absent from the data dropped out")
    p.add_argument("--seed", type=int, default=0, help="seed for reference-worker draws")
    p.add_argument("--budget", type=float)
    p.add_argument("--clamp", action="store_true", help="floor payments at zero (departs from the analysed mechanism)")
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_pay)

    p = sub.add_parser("verify-bne", help="best-response grid check of the equilibrium for one calibration")
    _add_config_args(p)
    p.add_argument("--workers", type=int)
    p.add_argument("--grid", type=int, default=100, help="deviation grid points per worker")
    p.set_defaults(func=cmd_verify_bne)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CrowdsenseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
