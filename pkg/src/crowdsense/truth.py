"""Iterative truth discovery over dense continuous readings.

The loop alternates a weight update from the current truth estimates with a
weighted-mean truth update, until the estimates stop moving.  The weight rule
is pluggable; CRH (log of total over own squared deviation) ships as default.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import AggregationError, ConfigurationError

DEVIATION_FLOOR = 1e-12
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class DataMatrix:
    """Readings ``values[i, m]`` of participant ``participants[i]`` on ``tasks[m]``."""

    values: np.ndarray
    participants: tuple
    tasks: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ConfigurationError("readings must form a 2-D (participant x task) matrix")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "participants", tuple(self.participants))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if values.shape != (len(self.participants), len(self.tasks)):
            raise ConfigurationError(
                f"shape {values.shape} does not match "
                f"{len(self.participants)} participants x {len(self.tasks)} tasks"
            )
        if len(set(self.participants)) != len(self.participants):
            raise ConfigurationError("duplicate participant identifiers")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigurationError("duplicate task identifiers")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("readings must be finite")

    @property
    def n_participants(self) -> int:
        return len(self.participants)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def row(self, participant) -> np.ndarray:
        return self.values[self.participants.index(participant)]


def load_data_csv(path) -> DataMatrix:
    """Read ``worker_id,task_id,value`` lines; every worker must cover every task."""
    readings: dict = {}
    workers: list = []
    tasks: list = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"worker_id", "task_id", "value"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"data CSV lacks columns {sorted(missing)}")
        for line_no, row in enumerate(reader, start=2):
            w, t = row["worker_id"].strip(), row["task_id"].strip()
            if (w, t) in readings:
                raise ConfigurationError(f"line {line_no}: duplicate reading for ({w}, {t})")
            try:
                readings[(w, t)] = float(row["value"])
            except ValueError:
                raise ConfigurationError(f"line {line_no}: bad value {row['value']!r}") from None
            if w not in workers:
                workers.append(w)
            if t not in tasks:
                tasks.append(t)
    if not workers:
        raise ConfigurationError("data CSV holds no readings")
    values = np.empty((len(workers), len(tasks)))
    for i, w in enumerate(workers):
        for m, t in enumerate(tasks):
            try:
                values[i, m] = readings[(w, t)]
            except KeyError:
                raise ConfigurationError(f"worker {w} has no reading for task {t}") from None
    return DataMatrix(values, workers, tasks)


def write_data_csv(data: DataMatrix, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "task_id", "value"])
        for i, w in enumerate(data.participants):
            for m, t in enumerate(data.tasks):
                writer.writerow([w, t, repr(float(data.values[i, m]))])


@dataclass
class AggregationResult:
    truths: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    changes: list = field(default_factory=list)
    # participants whose raw weight was negative and got clipped to 0, per iteration
    clipped: list = field(default_factory=list)
    uniform_fallback: bool = False


WeightRule = Callable[[np.ndarray, np.ndarray], np.ndarray]


def raw_crh_weights(values: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """CRH weights before clipping; may be negative."""
    own = np.sum((values - truths) ** 2, axis=1)
    total = own.sum()
    if total <= 0.0:
        return np.zeros(len(own))
    return np.log(total / np.maximum(own, DEVIATION_FLOOR))


def crh_weights(data: DataMatrix | np.ndarray, truths: Sequence[float]) -> np.ndarray:
    """Per-participant CRH weights, clipped at zero so they stay usable as mixing weights."""
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if truths.shape != (values.shape[1],):
        raise AggregationError("truth estimates must cover every task")
    return np.maximum(raw_crh_weights(values, truths), 0.0)


def weighted_truths(data: DataMatrix | np.ndarray, weights: Sequence[float]) -> np.ndarray:
    values = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (values.shape[0],):
        raise AggregationError("need exactly one weight per participant")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise AggregationError("weights must be non-negative with at least one positive")
    est = weights @ values / weights.sum()
    # keep each estimate inside its task's reading range despite rounding
    return np.clip(est, values.min(axis=0), values.max(axis=0))


WEIGHT_RULES: dict[str, WeightRule] = {"crh": raw_crh_weights}


def run_truth_discovery(
    data: DataMatrix,
    weight_rule: str | WeightRule = "crh",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int | None = None,
) -> AggregationResult:
    """Alternate weight and truth updates until the largest truth change drops below ``tol``.

    Truths start at the per-task mean; passing ``seed`` instead starts them at a
    uniform draw inside each task's reading range.
    """
    if data.n_participants == 0 or data.n_tasks == 0:
        raise AggregationError("truth discovery needs at least one participant and one task")
    rule = WEIGHT_RULES[weight_rule] if isinstance(weight_rule, str) else weight_rule
    values = data.values
    if seed is None:
        truths = values.mean(axis=0)
    else:
        rng = np.random.default_rng(seed)
        truths = rng.uniform(values.min(axis=0), values.max(axis=0))

    result = AggregationResult(truths, np.ones(data.n_participants), 0, False)
    for it in range(1, max_iter + 1):
        raw = np.asarray(rule(values, truths), dtype=float)
        weights = np.maximum(raw, 0.0)
        result.clipped.append(int(np.count_nonzero(raw < 0)))
        if not np.any(weights > 0):
            # every source equally far from the estimate (e.g. a single source)
            weights = np.ones_like(weights)
            result.uniform_fallback = True
        new = weighted_truths(values, weights)
        change = float(np.max(np.abs(new - truths)))
        result.changes.append(change)
        truths = new
        result.weights = weights
        result.iterations = it
        if change < tol:
            result.converged = True
            break
    result.truths = truths
    return result
