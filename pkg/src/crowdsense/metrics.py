"""Accuracy, error-probability, and mechanism-property checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

VERDICT_TOL = 1e-9
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def mae(truths_est, truths_true) -> float:
    est = np.asarray(truths_est, dtype=float)
    true = np.asarray(truths_true, dtype=float)
    if est.shape != true.shape:
        raise DomainError("estimate and truth vectors must cover the same tasks")
    return float(np.mean(np.abs(est - true)))


def error_bound(participant_deltas: Sequence[float], alpha_err: float, cap: bool = True) -> float:
    """Markov bound ``sqrt(2/pi) * sum(delta) / alpha`` on ``P(MAE >= alpha)``."""
    if not alpha_err > 0:
        raise DomainError("error threshold must be positive")
    raw = SQRT_2_OVER_PI * float(np.sum(participant_deltas)) / alpha_err
    return min(raw, 1.0) if cap else raw


def error_probability_estimate(trial_maes: Sequence[float], alpha_err: float) -> float:
    maes = np.asarray(trial_maes, dtype=float)
    if maes.size == 0:
        raise DomainError("need at least one trial")
    return float(np.mean(maes >= alpha_err))


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


@dataclass
class Verdict:
    passed: bool
    margin: float
    detail: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {"passed": self.passed, "margin": self.margin, **self.detail}


def verify_ir(expected_utilities: Sequence[float], tol: float = VERDICT_TOL) -> Verdict:
    """Pass iff no participant expects a negative utility (empty set passes)."""
    u = np.asarray(expected_utilities, dtype=float)
    if u.size == 0:
        return Verdict(True, math.inf, {"participants": 0})
    worst = float(u.min())
    return Verdict(worst >= -tol, worst, {"participants": int(u.size), "violations": int(np.sum(u < -tol))})


def verify_budget(
    expected_total: float,
    budget: float,
    realized_totals: Optional[Sequence[float]] = None,
    tol: float = VERDICT_TOL,
) -> Verdict:
    """Expected total payment against the budget, with realized totals summarised if given."""
    margin = budget - expected_total
    detail: dict = {"expected_total": float(expected_total), "budget": float(budget)}
    if not margin >= -tol:
        detail["overshoot"] = float(-margin)
    if realized_totals is not None and len(realized_totals):
        r = np.asarray(realized_totals, dtype=float)
        detail["realized"] = {
            "n": int(r.size),
            "mean": float(r.mean()),
            "std": float(r.std(ddof=1)) if r.size > 1 else 0.0,
            "se": float(r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else 0.0,
            "max": float(r.max()),
            "over_budget_fraction": float(np.mean(r > budget)),
        }
    return Verdict(margin >= -tol, float(margin), detail)


def approximation_ratio(app: float, opt: float) -> float:
    return app / opt if opt > 0 else math.inf


@dataclass
class TrialReport:
    mechanism: str
    sweep_value: float
    trial_index: int
    workers: int
    tasks: int
    mae: Optional[float]
    participant_count: int
    app: float
    opt: float
    total_payment: Optional[float] = None
    negative_payments: Optional[int] = None
    realized_utilities: Optional[np.ndarray] = None
    expected_total: Optional[float] = None
    ir_pass: Optional[bool] = None
    budget_pass: Optional[bool] = None
    thresholds: dict = field(default_factory=dict)
    guarantee_available: Optional[bool] = None
    budget_infeasible: bool = False
    crh_iterations: int = 0
    crh_clipped: int = 0

    @property
    def ratio(self) -> float:
        return approximation_ratio(self.app, self.opt)
