"""Monte-Carlo comparison of the peer-prediction mechanism against effort baselines.

A run sweeps either the worker count or the task count.  At every sweep point
each mechanism is simulated for ``trials`` independent trials:

* ``theseus``: calibrate thresholds and payments, play the equilibrium profile,
  aggregate with CRH, pay workers, check IR and budget;
* ``max_std``: every worker senses at her worst noise level;
* ``random_std``: every worker picks a noise level uniformly in her range.

Every random draw comes from a stream keyed by ``(seed, sweep value, trial,
stream tag)``, so results do not depend on execution order or process count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .calibration import (
    COMPLETE,
    INCOMPLETE,
    GuaranteeTargets,
    calibrate,
)
from .errors import ConfigurationError
from .metrics import (
    TrialReport,
    error_probability_estimate,
    error_bound,
    mae,
    verify_budget,
    verify_ir,
)
from .payment import compute_payments, expected_payment
from .population import (
    CostBounds,
    StrategyProfile,
    bne_profile_complete,
    bne_profile_incomplete,
    expected_utility,
    generate_data,
    sample_population,
)
from .quality import make_distribution
from .truth import run_truth_discovery

MECHANISMS = ("theseus", "random_std", "max_std")
SWEEP_PARAMS = ("workers", "tasks")

STREAMS = {"population": 1, "truths": 2, "noise": 3, "references": 4, "baseline": 5, "thresholds": 6}


def stream(seed: int, sweep_value: int, trial_index: int, tag: str) -> np.random.Generator:
    """Independent generator for one (seed, sweep point, trial, purpose) tuple."""
    ss = np.random.SeedSequence([int(seed), int(sweep_value), int(trial_index), STREAMS[tag]])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ExperimentConfig:
    setting: Optional[str] = None
    scenario: str = COMPLETE
    mechanisms: tuple = MECHANISMS
    sweep_param: str = "workers"
    sweep_values: tuple = (120, 130, 140, 150)
    workers: tuple = (120, 150)
    tasks: tuple = (30, 30)
    quality_kind: str = "uniform"
    quality: tuple = (0.1, 4.0)
    delta_hi: tuple = (5.0, 10.0)
    truth: tuple = (0.0, 10.0)
    theta: float = 0.9
    alpha_ratio: float = 5.0
    beta: float = 0.1
    budget: float = 50000.0
    c1: tuple = (0.5, 1.0)
    c2: tuple = (10.0, 12.0)
    trials: int = 1000
    seed: int = 0
    error_thresholds: tuple = (0.05, 0.1, 0.2, 0.5, 1.0)
    fallback_upper: Optional[float] = None
    tolerance: float = 1e-6
    max_iterations: int = 100

    def __post_init__(self):
        for name in ("workers", "tasks", "quality", "delta_hi", "truth", "c1", "c2"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{name} range {lo},{hi} is not ordered")
        if self.scenario not in (COMPLETE, INCOMPLETE):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        bad = set(self.mechanisms) - set(MECHANISMS)
        if bad or not self.mechanisms:
            raise ConfigurationError(f"unknown mechanisms {sorted(bad)}")
        if self.sweep_param not in SWEEP_PARAMS:
            raise ConfigurationError(f"sweep_param must be one of {SWEEP_PARAMS}")
        if not self.sweep_values:
            raise ConfigurationError("at least one sweep value required")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if min(self.workers) < 1 or min(self.tasks) < 1 or min(self.sweep_values) < 1:
            raise ConfigurationError("worker and task counts must be positive")
        if self.delta_hi[0] <= self.quality[1]:
            raise ConfigurationError("delta_hi range must lie above the quality support")
        if self.c2[0] < self.c1[1] * self.delta_hi[1]:
            # otherwise the intercept repair can push c2 outside the bounds the platform assumes
            raise ConfigurationError("cost bounds admit negative sensing cost: need c2_lo >= c1_hi * delta_hi_max")
        GuaranteeTargets(self.theta, self.alpha_ratio, self.beta)
        self.dist  # validates the support

    @property
    def dist(self):
        return make_distribution(self.quality_kind, *self.quality)

    @property
    def targets(self) -> GuaranteeTargets:
        return GuaranteeTargets(self.theta, self.alpha_ratio, self.beta)

    @property
    def cost_bounds(self) -> CostBounds:
        return CostBounds(self.c1[0], self.c1[1], self.c2[0], self.c2[1])

    def at(self, sweep_value: int) -> "ExperimentConfig":
        return dataclasses.replace(self, **{self.sweep_param: (int(sweep_value), int(sweep_value))})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


_TABLE_BASE = dict(quality=(0.1, 4.0), delta_hi=(5.0, 10.0), truth=(0.0, 10.0), theta=0.9, alpha_ratio=5.0, beta=0.1)

SETTINGS = {
    "I": dict(_TABLE_BASE, scenario=COMPLETE, sweep_param="workers", sweep_values=(120, 130, 140, 150),
              workers=(120, 150), tasks=(30, 30)),
    "II": dict(_TABLE_BASE, scenario=COMPLETE, sweep_param="tasks", sweep_values=(10, 20, 30, 40),
               workers=(130, 130), tasks=(10, 40)),
    "III": dict(_TABLE_BASE, scenario=INCOMPLETE, sweep_param="workers", sweep_values=(120, 130, 140, 150),
                workers=(120, 150), tasks=(30, 30)),
    "IV": dict(_TABLE_BASE, scenario=INCOMPLETE, sweep_param="tasks", sweep_values=(10, 20, 30, 40),
               workers=(130, 130), tasks=(10, 40)),
}


def setting_config(setting: str, **overrides) -> ExperimentConfig:
    try:
        base = SETTINGS[setting.upper()]
    except KeyError:
        raise ConfigurationError(f"unknown setting {setting!r}; choose from {sorted(SETTINGS)}") from None
    return ExperimentConfig(setting=setting.upper(), **{**base, **overrides})


# -- flat key = value config files ------------------------------------------------

_RANGE_KEYS = {"workers", "tasks", "quality", "delta_hi", "truth", "c1", "c2"}
_LIST_KEYS = {"mechanisms": str, "sweep_values": int, "error_thresholds": float}
_SCALARS = {
    "setting": str, "scenario": str, "sweep_param": str, "quality_kind": str,
    "theta": float, "alpha_ratio": float, "beta": float, "budget": float,
    "trials": int, "seed": int, "tolerance": float, "max_iterations": int,
    "fallback_upper": float,
}
CONFIG_KEYS = sorted(_RANGE_KEYS | set(_LIST_KEYS) | set(_SCALARS))


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _RANGE_KEYS:
        parts = [p for p in raw.replace(" ", "").split(",") if p]
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise ConfigurationError(f"{key}: expected 'lo,hi', got {raw!r}")
        conv = int if key in ("workers", "tasks") else float
        return tuple(conv(p) for p in parts)
    if key in _LIST_KEYS:
        conv = _LIST_KEYS[key]
        return tuple(conv(p.strip()) for p in raw.split(",") if p.strip())
    if key in _SCALARS:
        if key == "fallback_upper" and raw.lower() in ("", "none"):
            return None
        return _SCALARS[key](raw)
    raise ConfigurationError(f"unknown config key {key!r}; known keys: {', '.join(CONFIG_KEYS)}")


def parse_config_text(text: str) -> dict:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {line_no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, raw)
        except ValueError as exc:
            raise ConfigurationError(f"line {line_no}: {exc}") from None
    return values


def build_config(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Setting preset (if named) < config file values < explicit overrides."""
    merged = {**(file_values or {}), **{k: v for k, v in (overrides or {}).items() if v is not None}}
    setting = merged.pop("setting", None)
    if setting:
        return setting_config(setting, **merged)
    return ExperimentConfig(**merged)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    return build_config(parse_config_text(Path(path).read_text()), overrides)


# -- trials ------------------------------------------------------------------------

def baseline_profile(mechanism: str, workers, seed=None) -> StrategyProfile:
    """Low-effort reference behaviour: everyone participates."""
    ids = [w.id for w in workers]
    lo = np.array([w.delta_lo for w in workers], dtype=float)
    hi = np.array([w.delta_hi for w in workers], dtype=float)
    if mechanism == "max_std":
        return StrategyProfile(ids, hi)
    if mechanism == "random_std":
        rng = np.random.default_rng(seed)
        return StrategyProfile(ids, rng.uniform(lo, hi))
    raise ConfigurationError(f"unknown baseline {mechanism!r}")


def _draw_count(rng: np.random.Generator, bounds: tuple) -> int:
    lo, hi = bounds
    return int(lo) if lo == hi else int(rng.integers(lo, hi + 1))


def run_trial(
    config: ExperimentConfig,
    trial_index: int,
    mechanism: str = "theseus",
    sweep_value: Optional[int] = None,
) -> TrialReport:
    """One end-to-end trial; deterministic in ``(config.seed, sweep_value, trial_index)``."""
    if sweep_value is None:
        sweep_value = config.sweep_values[0]
    point = config.at(sweep_value)
    key = (config.seed, sweep_value, trial_index)
    dist = point.dist

    pop_rng = stream(*key, "population")
    n_workers = _draw_count(pop_rng, point.workers)
    n_tasks = _draw_count(pop_rng, point.tasks)
    pop = sample_population(n_workers, dist, point.delta_hi, point.cost_bounds, pop_rng)
    truths = stream(*key, "truths").uniform(point.truth[0], point.truth[1], n_tasks)
    opt = float(pop.delta_lo.min())

    report = TrialReport(mechanism, sweep_value, trial_index, n_workers, n_tasks,
                         None, 0, 0.0, opt)
    calib = None
    if mechanism == "theseus":
        calib = calibrate(
            pop, dist, point.targets, point.budget, point.scenario,
            cost_bounds=point.cost_bounds,
            rng=stream(*key, "thresholds"),
            fallback_upper=point.fallback_upper,
        )
        report.thresholds = dict(calib.thresholds)
        report.guarantee_available = calib.guarantee_available
        report.budget_infeasible = calib.infeasible is not None
        if point.scenario == COMPLETE:
            profile = bne_profile_complete(pop, calib.thresholds["delta_t"])
        else:
            profile = bne_profile_incomplete(
                pop, calib.thresholds["delta_l"], calib.thresholds["delta_h"], calib.params, dist
            )
    else:
        profile = baseline_profile(mechanism, pop, stream(*key, "baseline"))

    deltas = profile.participant_deltas
    report.participant_count = int(deltas.size)
    report.app = float(deltas.sum())

    if calib is not None:
        ref = dist.truncated_second_moment(calib.ref_second_moment_cap)
        part = [w for w, d in zip(pop, profile.deltas) if d is not None]
        utils = [expected_utility(w, w.delta_lo, calib.params.worker(w.id), ref) for w in part]
        exp_total = sum(expected_payment(*calib.params.worker(w.id), w.delta_lo, ref) for w in part)
        report.ir_pass = verify_ir(utils).passed
        report.budget_pass = verify_budget(exp_total, calib.params.budget).passed
        report.expected_total = float(exp_total)
        report.total_payment = 0.0
        report.negative_payments = 0

    if deltas.size == 0:
        return report

    data = generate_data(profile, truths, stream(*key, "noise"))
    agg = run_truth_discovery(data, tol=point.tolerance, max_iter=point.max_iterations)
    report.mae = mae(agg.truths, truths)
    report.crh_iterations = agg.iterations
    report.crh_clipped = max(agg.clipped) if agg.clipped else 0

    if calib is not None:
        record = compute_payments(data, pop.ids, calib.params, stream(*key, "references"))
        report.total_payment = record.total
        report.negative_payments = record.negative_count
        mask = profile.participant_mask
        costs = -pop.cost_slope[mask] * deltas + pop.cost_intercept[mask]
        report.realized_utilities = record.payments[mask] - costs
    return report


# -- batches -----------------------------------------------------------------------

def _run_task(args) -> TrialReport:
    config, mechanism, sweep_value, trial_index = args
    return run_trial(config, trial_index, mechanism, sweep_value)


def run_trials(config: ExperimentConfig, jobs: int = 1) -> list[TrialReport]:
    """All trials of a run in canonical (sweep value, mechanism, trial) order."""
    tasks = [
        (config, mech, v, i)
        for v in config.sweep_values
        for mech in config.mechanisms
        for i in range(config.trials)
    ]
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks, chunksize=chunk))


def _rate(flags) -> Optional[float]:
    flags = [f for f in flags if f is not None]
    return float(np.mean(flags)) if flags else None


def summarize_point(config: ExperimentConfig, reports: Sequence[TrialReport]) -> dict:
    """Aggregate the trials of one (sweep value, mechanism) cell."""
    reports = sorted(reports, key=lambda r: r.trial_index)
    kept = [r for r in reports if r.mae is not None]
    maes = np.array([r.mae for r in kept], dtype=float)
    out = {
        "sweep_value": reports[0].sweep_value,
        "mechanism": reports[0].mechanism,
        "trials": len(reports),
        "excluded_no_participants": len(reports) - len(kept),
        "mean_mae": float(maes.mean()) if maes.size else None,
        "std_mae": float(maes.std(ddof=1)) if maes.size > 1 else None,
        "participant_mean": float(np.mean([r.participant_count for r in reports])),
        "total_payment_mean": _mean_opt([r.total_payment for r in reports]),
        "ir_pass_rate": _rate([r.ir_pass for r in reports]),
        "budget_pass_rate": _rate([r.budget_pass for r in reports]),
    }
    if reports[0].mechanism == "theseus":
        out["guarantee_unavailable"] = sum(1 for r in reports if r.guarantee_available is False)
        out["budget_infeasible"] = sum(1 for r in reports if r.budget_infeasible)
        out["negative_payment_mean"] = _mean_opt([r.negative_payments for r in reports])
        out["expected_total_mean"] = _mean_opt([r.expected_total for r in reports])
    curve = []
    for alpha in config.error_thresholds:
        entry = {"alpha": alpha, "error_probability": None, "error_bound_mean": None, "error_bound_holds": None}
        if maes.size:
            p = error_probability_estimate(maes, alpha)
            bound = float(np.mean([error_bound([r.app], alpha) for r in kept]))
            raw = float(np.mean([error_bound([r.app], alpha, cap=False) for r in kept]))
            se = math.sqrt(max(p * (1 - p), 0.0) / maes.size)
            entry.update(error_probability=p, error_bound_mean=bound, error_bound_raw_mean=raw,
                         error_bound_holds=bool(p <= bound + 3 * se))
        curve.append(entry)
    out["error_curve"] = curve
    return out


def _mean_opt(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(config: ExperimentConfig, reports: Sequence[TrialReport]) -> list[dict]:
    cells: dict = {}
    for r in reports:
        cells.setdefault((r.sweep_value, r.mechanism), []).append(r)
    return [
        summarize_point(config, cells[(v, m)])
        for v in config.sweep_values
        for m in config.mechanisms
        if (v, m) in cells
    ]


@dataclass
class RunResult:
    config: ExperimentConfig
    summary: list
    reports: list = field(repr=False, default_factory=list)

    def point(self, sweep_value, mechanism) -> dict:
        for row in self.summary:
            if row["sweep_value"] == sweep_value and row["mechanism"] == mechanism:
                return row
        raise KeyError((sweep_value, mechanism))


def run_setting(config: ExperimentConfig, jobs: int = 1) -> RunResult:
    reports = run_trials(config, jobs)
    return RunResult(config, summarize(config, reports), reports)


CSV_COLUMNS = (
    "sweep_value", "mechanism", "mean_mae", "std_mae", "participant_mean",
    "total_payment_mean", "ir_pass_rate", "budget_pass_rate",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_csv(summary: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in summary:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def manifest(result: RunResult) -> dict:
    cfg = result.config
    flags = {
        "guarantee_unavailable_trials": sum(r.get("guarantee_unavailable", 0) for r in result.summary),
        "budget_infeasible_trials": sum(r.get("budget_infeasible", 0) for r in result.summary),
        "negative_weight_clipping": "CRH weights below zero are clipped to zero",
        "payments_clamped": False,
    }
    return {
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "flags": flags,
        "exclusions": {
            f"{r['sweep_value']}/{r['mechanism']}": r["excluded_no_participants"] for r in result.summary
        },
        "summary": result.summary,
    }


def write_outputs(result: RunResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"setting_{result.config.setting}" if result.config.setting else "run"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_text(summary_csv(result.summary))
    json_path.write_text(json.dumps(manifest(result), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
