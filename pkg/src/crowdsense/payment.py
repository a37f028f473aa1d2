"""Peer-prediction payments.

Each participant is paid ``b - a * mean_m (x_s[m] - x_r[m])**2`` against a
reference ``r`` drawn uniformly from the *other* participants; workers who
dropped out get nothing.  Payments never look at ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .truth import DataMatrix


@dataclass(frozen=True, eq=False)
class PaymentParams:
    worker_ids: tuple
    a: np.ndarray
    b: np.ndarray
    budget: float

    def __post_init__(self):
        object.__setattr__(self, "worker_ids", tuple(self.worker_ids))
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        n = len(self.worker_ids)
        if a.shape != (n,) or b.shape != (n,):
            raise ConfigurationError("need one (a, b) pair per worker")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ConfigurationError("payment parameters a and b must be positive")
        if not self.budget > 0:
            raise ConfigurationError("budget must be positive")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.worker_ids)})

    @classmethod
    def uniform(cls, worker_ids, a: float, b: float, budget: float) -> "PaymentParams":
        n = len(worker_ids)
        return cls(worker_ids, np.full(n, a), np.full(n, b), budget)

    def index(self, worker_id) -> int:
        try:
            return self._index[worker_id]
        except KeyError:
            raise ConfigurationError(f"no payment parameters for worker {worker_id}") from None

    def worker(self, worker_id) -> tuple[float, float]:
        i = self.index(worker_id)
        return float(self.a[i]), float(self.b[i])

    def with_budget(self, budget: float) -> "PaymentParams":
        return PaymentParams(self.worker_ids, self.a, self.b, budget)


def load_params_csv(path, budget: float = float("inf")) -> PaymentParams:
    """Read ``worker_id,a,b`` rows."""
    ids, a, b = [], [], []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"worker_id", "a", "b"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"params CSV lacks columns {sorted(missing)}")
        for row in reader:
            ids.append(row["worker_id"].strip())
            a.append(float(row["a"]))
            b.append(float(row["b"]))
    return PaymentParams(ids, a, b, budget)


def deviation_payment(a, b, own, ref):
    """Payment for readings ``own`` against ``ref`` (mean over the last axis)."""
    own = np.asarray(own, dtype=float)
    ref = np.asarray(ref, dtype=float)
    return b - a * np.mean((own - ref) ** 2, axis=-1)


@dataclass
class PaymentRecord:
    worker_ids: tuple
    payments: np.ndarray
    references: list
    clamped: bool = False
    diagnostics: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(self.payments.sum())

    @property
    def negative_count(self) -> int:
        return int(np.count_nonzero(self.payments < 0))

    def payment(self, worker_id) -> float:
        return float(self.payments[self.worker_ids.index(worker_id)])

    def reference(self, worker_id) -> Optional[str]:
        return self.references[self.worker_ids.index(worker_id)]

    def summary(self) -> dict:
        return {
            "total": self.total,
            "negative_count": self.negative_count,
            "clamped": self.clamped,
            "diagnostics": list(self.diagnostics),
        }

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["worker_id", "reference_id", "payment"])
            for w, r, p in zip(self.worker_ids, self.references, self.payments):
                writer.writerow([w, "" if r is None else r, repr(float(p))])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def compute_payments(
    data: DataMatrix,
    all_workers: Sequence,
    params: PaymentParams,
    seed=None,
    clamp_negative: bool = False,
) -> PaymentRecord:
    """Pay every worker in ``all_workers``; those absent from ``data`` get 0.

    With a single participant there is no peer to compare against: that
    worker receives ``b`` and the record carries a ``no-peer`` diagnostic.
    ``clamp_negative`` floors payments at zero, which is *not* the analysed
    mechanism and is off by default.
    """
    all_workers = tuple(all_workers)
    for w in all_workers:
        params.index(w)
    unknown = set(data.participants) - set(all_workers)
    if unknown:
        raise ConfigurationError(f"participants missing from the worker set: {sorted(unknown)}")

    rng = np.random.default_rng(seed)
    n = data.n_participants
    pos = {w: i for i, w in enumerate(all_workers)}
    payments = np.zeros(len(all_workers))
    references: list = [None] * len(all_workers)
    record = PaymentRecord(all_workers, payments, references, clamped=clamp_negative)

    rows = np.array([pos[w] for w in data.participants], dtype=int)
    idx = np.array([params.index(w) for w in data.participants], dtype=int)
    a, b = params.a[idx], params.b[idx]
    if n == 1:
        payments[rows[0]] = b[0]
        record.diagnostics.append("no-peer")
    elif n > 1:
        # uniform over the n-1 others: draw from n-1 slots, skip own slot
        ref = rng.integers(0, n - 1, size=n)
        ref = ref + (ref >= np.arange(n))
        payments[rows] = deviation_payment(a, b, data.values, data.values[ref])
        for i, r in zip(rows, ref):
            references[i] = data.participants[r]
    if clamp_negative:
        np.maximum(payments, 0.0, out=payments)
    return record


def expected_payment(a: float, b: float, delta_own: float, ref_second_moment: float) -> float:
    """``E[p] = b - a (delta_own**2 + E[delta_ref**2])`` under Gaussian noise."""
    return b - a * (delta_own * delta_own + ref_second_moment)
