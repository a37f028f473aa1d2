"""Strategic workers: quality ranges, linear sensing costs, and equilibrium play.

Strategies live directly in noise-std space: a worker either reports with
noise std ``delta`` in ``[delta_lo, delta_hi]`` or drops out (``DROP_OUT``).
Sensing cost is ``-cost_slope * delta + cost_intercept``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, GenerationError
from .quality import QualityDistribution
from .truth import DataMatrix

DROP_OUT = None


@dataclass(frozen=True)
class WorkerProfile:
    id: str
    delta_lo: float
    delta_hi: float
    cost_slope: float
    cost_intercept: float

    def __post_init__(self):
        if not 0 < self.delta_lo < self.delta_hi:
            raise ConfigurationError(f"worker {self.id}: need 0 < delta_lo < delta_hi")
        if self.cost_slope <= 0 or self.cost_intercept <= 0:
            raise ConfigurationError(f"worker {self.id}: cost coefficients must be positive")

    def cost(self, delta) -> float:
        if delta is DROP_OUT:
            return 0.0
        return -self.cost_slope * delta + self.cost_intercept


@dataclass(frozen=True)
class CostBounds:
    c1_lo: float
    c1_hi: float
    c2_lo: float
    c2_hi: float

    def __post_init__(self):
        if not (0 < self.c1_lo <= self.c1_hi and 0 < self.c2_lo <= self.c2_hi):
            raise ConfigurationError(f"ill-ordered cost bounds {self}")

    def contains(self, worker: WorkerProfile) -> bool:
        return (
            self.c1_lo <= worker.cost_slope <= self.c1_hi
            and self.c2_lo <= worker.cost_intercept <= self.c2_hi
        )


class Population(Sequence):
    """Column-wise store of worker profiles; indexes and iterates as WorkerProfile."""

    def __init__(self, ids, delta_lo, delta_hi, cost_slope, cost_intercept):
        self.ids = tuple(ids)
        self.delta_lo = np.asarray(delta_lo, dtype=float)
        self.delta_hi = np.asarray(delta_hi, dtype=float)
        self.cost_slope = np.asarray(cost_slope, dtype=float)
        self.cost_intercept = np.asarray(cost_intercept, dtype=float)
        n = len(self.ids)
        for arr in (self.delta_lo, self.delta_hi, self.cost_slope, self.cost_intercept):
            if arr.shape != (n,):
                raise ConfigurationError("population columns differ in length")
        if len(set(self.ids)) != n:
            raise ConfigurationError("duplicate worker identifiers")

    @classmethod
    def from_workers(cls, workers: Sequence[WorkerProfile]) -> "Population":
        if isinstance(workers, Population):
            return workers
        return cls(
            [w.id for w in workers],
            [w.delta_lo for w in workers],
            [w.delta_hi for w in workers],
            [w.cost_slope for w in workers],
            [w.cost_intercept for w in workers],
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return WorkerProfile(
            self.ids[i],
            float(self.delta_lo[i]),
            float(self.delta_hi[i]),
            float(self.cost_slope[i]),
            float(self.cost_intercept[i]),
        )

    def __iter__(self) -> Iterator[WorkerProfile]:
        return (self[i] for i in range(len(self)))


def worker_ids(count: int) -> list[str]:
    width = max(3, len(str(count - 1)))
    return [f"w{i:0{width}d}" for i in range(count)]


def sample_population(
    count: int,
    dist: QualityDistribution,
    delta_hi_range: tuple[float, float],
    cost_bounds: CostBounds,
    seed=None,
) -> Population:
    """Draw ``count`` workers i.i.d.; intercepts are raised to keep cost non-negative at delta_hi."""
    if count < 1:
        raise ConfigurationError("population needs at least one worker")
    hi_lo, hi_hi = delta_hi_range
    if not hi_lo <= hi_hi:
        raise ConfigurationError(f"ill-ordered delta_hi range {delta_hi_range}")
    if hi_lo <= dist.support_hi:
        raise ConfigurationError(
            f"delta_hi range {delta_hi_range} overlaps quality support "
            f"[{dist.support_lo}, {dist.support_hi}]"
        )
    rng = np.random.default_rng(seed)
    lo = dist.sample(rng, count)
    hi = rng.uniform(hi_lo, hi_hi, count)
    c1 = rng.uniform(cost_bounds.c1_lo, cost_bounds.c1_hi, count)
    c2 = rng.uniform(cost_bounds.c2_lo, cost_bounds.c2_hi, count)
    c2 = np.maximum(c2, c1 * hi)
    return Population(worker_ids(count), lo, hi, c1, c2)


@dataclass(frozen=True)
class StrategyProfile:
    """Per-worker noise std, or ``DROP_OUT``."""

    worker_ids: tuple
    deltas: tuple

    def __post_init__(self):
        object.__setattr__(self, "worker_ids", tuple(self.worker_ids))
        object.__setattr__(self, "deltas", tuple(None if d is None else float(d) for d in self.deltas))
        if len(self.worker_ids) != len(self.deltas):
            raise ConfigurationError("one strategy per worker required")

    @classmethod
    def for_workers(cls, workers, deltas) -> "StrategyProfile":
        profile = cls([w.id for w in workers], deltas)
        for w, d in zip(workers, profile.deltas):
            # small tolerance for floating draws on the range ends
            if d is not None and not (w.delta_lo - 1e-12 <= d <= w.delta_hi + 1e-12):
                raise ConfigurationError(f"strategy {d} outside worker {w.id} range")
        return profile

    def __len__(self) -> int:
        return len(self.deltas)

    def strategy(self, worker_id) -> Optional[float]:
        return self.deltas[self.worker_ids.index(worker_id)]

    @property
    def participants(self) -> list:
        return [w for w, d in zip(self.worker_ids, self.deltas) if d is not None]

    @property
    def participant_mask(self) -> np.ndarray:
        return np.array([d is not None for d in self.deltas], dtype=bool)

    @property
    def participant_deltas(self) -> np.ndarray:
        return np.array([d for d in self.deltas if d is not None], dtype=float)


def generate_data(profile: StrategyProfile, truths, seed=None, task_ids=None) -> DataMatrix:
    """Readings = ground truth + N(0, delta^2) noise for every participant and task."""
    truths = np.asarray(truths, dtype=float)
    deltas = profile.participant_deltas
    if deltas.size == 0:
        raise GenerationError("every worker dropped out; nothing to generate")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((deltas.size, truths.size)) * deltas[:, None]
    if task_ids is None:
        task_ids = [f"t{m}" for m in range(truths.size)]
    return DataMatrix(truths[None, :] + noise, profile.participants, task_ids)


def expected_utility(
    worker: WorkerProfile,
    strategy,
    payment: tuple[float, float],
    ref_second_moment: float,
) -> float:
    """Closed-form expected utility with payment ``(a, b)``.

    ``ref_second_moment`` is the reference worker's expected squared noise std.
    Dropping out is worth exactly zero.
    """
    if strategy is DROP_OUT:
        return 0.0
    a, b = payment
    return b - a * (strategy * strategy + ref_second_moment) + worker.cost_slope * strategy - worker.cost_intercept


def best_in_range_response(worker: WorkerProfile, a: float) -> float:
    """Utility-maximising noise std within the worker's range (ignores drop-out)."""
    return float(np.clip(worker.cost_slope / (2.0 * a), worker.delta_lo, worker.delta_hi))


def bne_profile_complete(workers: Sequence[WorkerProfile], delta_t: float) -> StrategyProfile:
    """Workers with ``delta_lo <= delta_t`` report at ``delta_lo``; the rest drop out."""
    pop = Population.from_workers(workers)
    deltas = [float(lo) if lo <= delta_t else DROP_OUT for lo in pop.delta_lo]
    return StrategyProfile(pop.ids, deltas)


def bne_profile_incomplete(
    workers: Sequence[WorkerProfile],
    delta_l: float,
    delta_h: float,
    payments,
    dist: QualityDistribution,
) -> StrategyProfile:
    """Equilibrium play when the platform only knows cost bounds.

    Below ``delta_l`` everyone participates at ``delta_lo``, above ``delta_h``
    everyone drops out; in between a worker participates iff her expected
    utility at ``delta_lo`` (against the reference moment below ``delta_h``)
    is non-negative.
    """
    if not delta_l < delta_h:
        raise ConfigurationError("need delta_l < delta_h")
    ref = dist.truncated_second_moment(delta_h)
    pop = Population.from_workers(workers)
    deltas = []
    for i, w in enumerate(pop):
        lo = w.delta_lo
        if lo <= delta_l:
            deltas.append(lo)
        elif lo > delta_h:
            deltas.append(DROP_OUT)
        else:
            u = expected_utility(w, lo, payments.worker(w.id), ref)
            deltas.append(lo if u >= 0 else DROP_OUT)
    return StrategyProfile(pop.ids, deltas)


@dataclass
class BestResponseReport:
    max_gain: float
    worst_worker: Optional[str]
    violations: list
    excluded_nonnegative: list
    checked: int

    @property
    def passed(self) -> bool:
        return not self.violations


def best_response_check(
    workers: Sequence[WorkerProfile],
    profile: StrategyProfile,
    payments,
    ref_second_moment: float,
    grid_points: int = 100,
    tol: float = 1e-9,
) -> BestResponseReport:
    """Compare each worker's profile utility against a grid of deviations and drop-out.

    A violation is a deviation that gains more than ``tol``.  Dropped-out
    workers whose best participating utility is non-negative are listed as a
    diagnostic; at zero they are indifferent, which is not a violation.
    """
    report = BestResponseReport(-np.inf, None, [], [], 0)
    for w in Population.from_workers(workers):
        pay = payments.worker(w.id)
        current = profile.strategy(w.id)
        u_now = expected_utility(w, current, pay, ref_second_moment)
        grid = np.linspace(w.delta_lo, w.delta_hi, grid_points)
        a, b = pay
        u_grid = b - a * (grid**2 + ref_second_moment) + w.cost_slope * grid - w.cost_intercept
        best_dev = max(float(u_grid.max()), 0.0)
        gain = best_dev - u_now
        report.checked += 1
        if gain > report.max_gain:
            report.max_gain, report.worst_worker = gain, w.id
        if gain > tol:
            report.violations.append((w.id, gain))
        if current is DROP_OUT and float(u_grid.max()) >= 0:
            report.excluded_nonnegative.append((w.id, float(u_grid.max())))
    return report
