"""Choosing payment parameters and participation thresholds.

Complete information: the platform knows every worker's cost coefficients
and uses one threshold ``delta_t``.  Incomplete information: only
:class:`CostBounds` are known and two thresholds ``delta_l < delta_h`` bracket
the band of workers whose participation depends on their private costs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigurationError, DomainError
from .payment import PaymentParams
from .population import CostBounds, Population, WorkerProfile, worker_ids
from .quality import QualityDistribution

SLACK = 1e-9
ROOT_XTOL = 1e-9
COMPLETE = "complete"
INCOMPLETE = "incomplete"


@dataclass(frozen=True)
class GuaranteeTargets:
    theta: float = 0.9
    alpha_ratio: float = 5.0
    beta: float = 0.1

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise DomainError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.alpha_ratio > 1:
            raise DomainError(f"alpha_ratio must exceed 1, got {self.alpha_ratio}")
        if not 0 < self.beta < 1:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")


def participation_lower_bound(dist: QualityDistribution, worker_count: int, theta: float) -> float:
    """Smallest threshold keeping ``P(min delta_lo <= threshold) >= theta``."""
    if not 0 < theta < 1:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if worker_count < 1:
        raise DomainError("worker_count must be at least 1")
    # 1 - (1-theta)**(1/S), computed without cancellation for small theta
    p = -math.expm1(math.log1p(-theta) / worker_count)
    return float(dist.quantile(min(max(p, 0.0), 1.0)))


@dataclass(frozen=True)
class NoSolution:
    """The ratio-guarantee equation has no root inside the support.

    ``g_lo``/``g_hi`` are the function values at the bracket ends.  When both
    are non-positive every threshold in the support already meets the target.
    """

    g_lo: float
    g_hi: float

    @property
    def everywhere_feasible(self) -> bool:
        return self.g_hi <= 0

    def __bool__(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {
            "no_solution": True,
            "sign_lo": int(np.sign(self.g_lo)),
            "sign_hi": int(np.sign(self.g_hi)),
            "g_lo": self.g_lo,
            "g_hi": self.g_hi,
        }


def ratio_guarantee_gap(dist: QualityDistribution, worker_count: int, targets: GuaranteeTargets):
    """The increasing function whose root is the largest admissible threshold."""
    scale = math.sqrt(-2.0 / (worker_count * math.log(targets.beta)))
    lo, alpha = dist.support_lo, targets.alpha_ratio

    def g(delta: float) -> float:
        return delta + scale * (dist.truncated_first_moment(delta) * worker_count - lo * alpha)

    return g


def approx_upper_bound(
    dist: QualityDistribution, worker_count: int, targets: GuaranteeTargets
) -> Union[float, NoSolution]:
    """Largest threshold for which ``P(APP/OPT >= alpha) <= beta`` is guaranteed.

    Bisection on the support; returns :class:`NoSolution` when the gap function
    does not change sign there.
    """
    g = ratio_guarantee_gap(dist, worker_count, targets)
    lo = dist.support_lo + 1e-9 * (dist.support_hi - dist.support_lo)
    hi = dist.support_hi
    g_lo, g_hi = g(lo), g(hi)
    if g_lo > 0 or g_hi <= 0:
        return NoSolution(g_lo, g_hi)
    return float(bisect(g, lo, hi, xtol=ROOT_XTOL, maxiter=200))


@dataclass(frozen=True)
class Infeasible:
    """Generated parameters that violate the budget condition."""

    params: PaymentParams
    min_budget: float
    shortfall: float
    reason: str = "budget"

    def __bool__(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"infeasible": True, "reason": self.reason, "min_budget": self.min_budget, "shortfall": self.shortfall}


def _min_budget(a: np.ndarray, b: np.ndarray, lo: float) -> float:
    return float(np.sum(b - 2.0 * a * lo * lo))


def complete_intercepts(pop: Population, a: np.ndarray, delta_t: float, dist: QualityDistribution) -> np.ndarray:
    """Intercepts leaving a worker at ``delta_lo == delta_t`` with zero expected utility."""
    ref = dist.truncated_second_moment(delta_t)
    return a * (delta_t * delta_t + ref) - pop.cost_slope * delta_t + pop.cost_intercept


def generate_complete_params(
    workers: Sequence[WorkerProfile],
    delta_t: float,
    dist: QualityDistribution,
    budget: float,
) -> Union[PaymentParams, Infeasible]:
    """Minimum slopes, boundary intercepts; Infeasible if the budget cannot cover them."""
    if not dist.support_lo < delta_t <= dist.support_hi:
        raise DomainError(f"delta_t {delta_t} outside ({dist.support_lo}, {dist.support_hi}]")
    pop = Population.from_workers(workers)
    a = pop.cost_slope / (2.0 * dist.support_lo)
    b = complete_intercepts(pop, a, delta_t, dist)
    need = _min_budget(a, b, dist.support_lo)
    params = PaymentParams(pop.ids, a, b, budget)
    if need > budget + SLACK:
        return Infeasible(params, need, need - budget)
    return params


def incomplete_interval(
    a: float, cost_bounds: CostBounds, delta_l: float, delta_h: float, dist: QualityDistribution
) -> tuple[float, float]:
    """Admissible intercept interval ``[lower, upper]`` for a common slope ``a``."""
    ref = dist.truncated_second_moment(delta_h)
    lower = a * (delta_l * delta_l + ref) - cost_bounds.c1_lo * delta_l + cost_bounds.c2_hi
    upper = a * (delta_h * delta_h + ref) - cost_bounds.c1_hi * delta_h + cost_bounds.c2_lo
    return lower, upper


def incomplete_min_slope(cost_bounds: CostBounds, delta_l: float, delta_h: float, dist: QualityDistribution) -> float:
    """Smallest common slope meeting the slope floor with a non-empty intercept interval."""
    floor = cost_bounds.c1_hi / (2.0 * dist.support_lo)
    # interval width is affine in a with slope delta_h^2 - delta_l^2 > 0
    crossing = (
        cost_bounds.c1_hi * delta_h - cost_bounds.c1_lo * delta_l + cost_bounds.c2_hi - cost_bounds.c2_lo
    ) / (delta_h * delta_h - delta_l * delta_l)
    return max(floor, crossing)


def generate_incomplete_params(
    worker_count: int,
    cost_bounds: CostBounds,
    delta_l: float,
    delta_h: float,
    dist: QualityDistribution,
    budget: float,
    ids: Optional[Sequence] = None,
) -> Union[PaymentParams, Infeasible]:
    """Common ``(a, b)`` for all workers: smallest workable slope, lowest admissible intercept."""
    if not dist.support_lo <= delta_l < delta_h <= dist.support_hi:
        raise DomainError(f"need support_lo <= delta_l < delta_h <= support_hi, got {delta_l}, {delta_h}")
    ids = worker_ids(worker_count) if ids is None else list(ids)
    if len(ids) != worker_count:
        raise ConfigurationError("ids must match worker_count")
    a = incomplete_min_slope(cost_bounds, delta_l, delta_h, dist)
    b, _ = incomplete_interval(a, cost_bounds, delta_l, delta_h, dist)
    params = PaymentParams.uniform(ids, a, b, budget)
    need = _min_budget(params.a, params.b, dist.support_lo)
    if need > budget + SLACK:
        return Infeasible(params, need, need - budget)
    return params


@dataclass(frozen=True)
class ConditionVerdict:
    name: str
    satisfied: bool
    margin: float
    worker: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "satisfied": self.satisfied, "margin": self.margin}
        if self.worker is not None:
            d["worker"] = self.worker
        return d


def _worst(name: str, margins: np.ndarray, ids, tol, scale=1.0) -> ConditionVerdict:
    """Collapse per-worker margins (>= 0 means satisfied) into one verdict.

    The slack is ``tol * max(1, |scale|)`` so large intercepts keep a
    rounding-sized allowance.
    """
    margins = np.broadcast_to(np.asarray(margins, dtype=float), (len(ids),))
    slack = tol * np.maximum(1.0, np.abs(np.broadcast_to(scale, margins.shape)))
    i = int(np.argmin(margins + slack))
    return ConditionVerdict(name, bool(np.all(margins >= -slack)), float(margins[i]), ids[i])


def check_conditions(
    params: PaymentParams,
    dist: QualityDistribution,
    scenario: str,
    *,
    workers: Optional[Sequence[WorkerProfile]] = None,
    delta_t: Optional[float] = None,
    cost_bounds: Optional[CostBounds] = None,
    delta_l: Optional[float] = None,
    delta_h: Optional[float] = None,
    tol: float = SLACK,
) -> list[ConditionVerdict]:
    """Evaluate every parameter condition of the scenario independently.

    Margins are signed so that negative means violated by that amount.
    """
    lo = dist.support_lo
    ids = params.worker_ids
    a, b = params.a, params.b
    budget_margin = params.budget - _min_budget(a, b, lo)
    budget = ConditionVerdict("budget", budget_margin >= -tol, budget_margin)

    if scenario == COMPLETE:
        if workers is None or delta_t is None:
            raise ConfigurationError("complete scenario needs workers and delta_t")
        pop = Population.from_workers(workers)
        if pop.ids != ids:
            raise ConfigurationError("params and workers list different worker ids")
        slope = _worst("slope_floor", a - pop.cost_slope / (2.0 * lo), ids, tol)
        target = complete_intercepts(pop, a, delta_t, dist)
        # equality condition, so the margin is minus the absolute gap
        boundary = _worst("boundary_intercept", -np.abs(b - target), ids, tol, target)
        return [slope, boundary, budget]

    if scenario == INCOMPLETE:
        if cost_bounds is None or delta_l is None or delta_h is None:
            raise ConfigurationError("incomplete scenario needs cost_bounds, delta_l and delta_h")
        ref = dist.truncated_second_moment(delta_h)
        slope = _worst("slope_floor", a - cost_bounds.c1_hi / (2.0 * lo), ids, tol)
        upper = a * (delta_h**2 + ref) - cost_bounds.c1_hi * delta_h + cost_bounds.c2_lo
        lower = a * (delta_l**2 + ref) - cost_bounds.c1_lo * delta_l + cost_bounds.c2_hi
        return [
            slope,
            _worst("intercept_upper", upper - b, ids, tol, upper),
            _worst("intercept_lower", b - lower, ids, tol, lower),
            budget,
        ]
    raise ConfigurationError(f"unknown scenario {scenario!r}")


@dataclass
class CalibrationReport:
    scenario: str
    delta_lower: float
    delta_upper: Union[float, NoSolution]
    thresholds: dict
    params: PaymentParams
    verdicts: list
    budget_slack: float
    guarantee_available: bool
    infeasible: Optional[Infeasible] = None
    draw_upper: float = field(default=math.nan)

    @property
    def feasible(self) -> bool:
        return self.infeasible is None and all(v.satisfied for v in self.verdicts)

    @property
    def ref_second_moment_cap(self) -> float:
        return self.thresholds["delta_t"] if self.scenario == COMPLETE else self.thresholds["delta_h"]

    def to_dict(self) -> dict:
        upper = self.delta_upper.to_dict() if isinstance(self.delta_upper, NoSolution) else self.delta_upper
        return {
            "scenario": self.scenario,
            "delta_lower": self.delta_lower,
            "delta_upper": upper,
            "draw_interval": [self.delta_lower, self.draw_upper],
            "guarantee_available": self.guarantee_available,
            "thresholds": dict(self.thresholds),
            "feasible": self.feasible,
            "budget": self.params.budget,
            "budget_slack": self.budget_slack,
            "infeasible": None if self.infeasible is None else self.infeasible.to_dict(),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "params": [
                {"worker_id": w, "a": float(a), "b": float(b)}
                for w, a, b in zip(self.params.worker_ids, self.params.a, self.params.b)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def threshold_interval(
    dist: QualityDistribution,
    worker_count: int,
    targets: GuaranteeTargets,
    fallback_upper: Optional[float] = None,
) -> tuple[float, Union[float, NoSolution], float, bool]:
    """Interval to draw thresholds from: ``(lower, upper_bound, draw_upper, guaranteed)``.

    When the ratio guarantee has no root, or its root sits below the
    participation bound, draws fall back to ``[lower, fallback_upper]`` and
    ``guaranteed`` is False.
    """
    lower = participation_lower_bound(dist, worker_count, targets.theta)
    upper = approx_upper_bound(dist, worker_count, targets)
    fallback = dist.support_hi if fallback_upper is None else min(fallback_upper, dist.support_hi)
    if isinstance(upper, NoSolution):
        if upper.everywhere_feasible:
            return lower, upper, dist.support_hi, True
        return lower, upper, max(fallback, lower), False
    if upper < lower:
        return lower, upper, max(fallback, lower), False
    return lower, upper, upper, True


def draw_thresholds(rng: np.random.Generator, lower: float, upper: float, scenario: str) -> dict:
    if scenario == COMPLETE:
        return {"delta_t": float(rng.uniform(lower, upper))}
    while True:
        lo_hi = np.sort(rng.uniform(lower, upper, 2))
        if lo_hi[0] < lo_hi[1]:
            return {"delta_l": float(lo_hi[0]), "delta_h": float(lo_hi[1])}


def calibrate(
    workers: Sequence[WorkerProfile],
    dist: QualityDistribution,
    targets: GuaranteeTargets,
    budget: float,
    scenario: str = COMPLETE,
    *,
    cost_bounds: Optional[CostBounds] = None,
    thresholds: Optional[dict] = None,
    rng: Optional[np.random.Generator] = None,
    fallback_upper: Optional[float] = None,
) -> CalibrationReport:
    """Thresholds, parameters and condition verdicts for one population.

    ``thresholds`` may be given explicitly; otherwise they are drawn uniformly
    from the admissible interval with ``rng``.
    """
    pop = Population.from_workers(workers)
    lower, upper, draw_upper, guaranteed = threshold_interval(dist, len(pop), targets, fallback_upper)
    if thresholds is None:
        if rng is None:
            raise ConfigurationError("pass explicit thresholds or an rng to draw them")
        thresholds = draw_thresholds(rng, lower, draw_upper, scenario)
    if scenario == COMPLETE:
        delta_t = thresholds["delta_t"]
        out = generate_complete_params(pop, delta_t, dist, budget)
        params = out.params if isinstance(out, Infeasible) else out
        verdicts = check_conditions(params, dist, COMPLETE, workers=pop, delta_t=delta_t)
    elif scenario == INCOMPLETE:
        if cost_bounds is None:
            raise ConfigurationError("incomplete scenario needs cost bounds")
        dl, dh = thresholds["delta_l"], thresholds["delta_h"]
        out = generate_incomplete_params(len(pop), cost_bounds, dl, dh, dist, budget, ids=pop.ids)
        params = out.params if isinstance(out, Infeasible) else out
        verdicts = check_conditions(params, dist, INCOMPLETE, cost_bounds=cost_bounds, delta_l=dl, delta_h=dh)
    else:
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    slack = budget - _min_budget(params.a, params.b, dist.support_lo)
    return CalibrationReport(
        scenario,
        lower,
        upper,
        dict(thresholds),
        params,
        verdicts,
        slack,
        guaranteed,
        out if isinstance(out, Infeasible) else None,
        draw_upper,
    )
