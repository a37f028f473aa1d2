"""Prior over workers' best achievable noise level.

Each worker's lower noise bound is an i.i.d. draw from a bounded density on
``[support_lo, support_hi]``.  Besides the usual pdf/cdf/quantile, the
calibration code needs the conditional moments ``E[X | X <= cap]`` and
``E[X^2 | X <= cap]``; families without closed forms get them by adaptive
Simpson quadrature.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, ClassVar

import numpy as np

from .errors import DomainError

QUAD_RTOL = 1e-10
_MAX_DEPTH = 60


def adaptive_simpson(
    func: Callable[[float], float],
    a: float,
    b: float,
    rtol: float = QUAD_RTOL,
    atol: float = 1e-15,
) -> float:
    """Integrate ``func`` over ``[a, b]`` with adaptive Simpson refinement."""
    if b == a:
        return 0.0
    fa, fm, fb = func(a), func(0.5 * (a + b)), func(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    # the global tolerance is set from a first coarse estimate
    tol = max(atol, rtol * abs(whole))
    return _simpson_step(func, a, b, fa, fm, fb, whole, tol, _MAX_DEPTH)


def _simpson_step(func, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = func(lm), func(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _simpson_step(func, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + _simpson_step(
        func, m, b, fm, frm, fb, right, tol / 2.0, depth - 1
    )


class QualityDistribution(ABC):
    """Bounded prior over per-worker best noise std.

    Subclasses provide ``pdf``, ``cdf`` and ``quantile``; truncated moments
    default to quadrature and may be overridden with closed forms.
    """

    kind: ClassVar[str] = "abstract"
    support_lo: float
    support_hi: float

    def _check_support(self) -> None:
        if not (self.support_lo > 0 and self.support_hi > self.support_lo):
            raise DomainError(
                f"support must satisfy 0 < lo < hi, got [{self.support_lo}, {self.support_hi}]"
            )

    @abstractmethod
    def pdf(self, x):
        ...

    @abstractmethod
    def cdf(self, x):
        ...

    @abstractmethod
    def quantile(self, p):
        ...

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(self.quantile(rng.random(size)), dtype=float)

    def _check_cap(self, cap: float) -> float:
        if not cap > self.support_lo:
            raise DomainError(
                f"truncation cap {cap} must exceed support_lo {self.support_lo}: "
                "conditioning event has zero probability"
            )
        if cap > self.support_hi * (1 + 1e-12):
            raise DomainError(f"truncation cap {cap} above support_hi {self.support_hi}")
        return min(cap, self.support_hi)

    def quad_truncated_moment(self, cap: float, power: int) -> float:
        """``E[X**power | X <= cap]`` by quadrature, whatever the family."""
        cap = self._check_cap(cap)
        mass = adaptive_simpson(lambda u: float(self.pdf(u)), self.support_lo, cap)
        if mass <= 0:
            raise DomainError(f"no probability mass below cap {cap}")
        num = adaptive_simpson(lambda u: u**power * float(self.pdf(u)), self.support_lo, cap)
        return num / mass

    def truncated_first_moment(self, cap: float) -> float:
        return self.quad_truncated_moment(cap, 1)

    def truncated_second_moment(self, cap: float) -> float:
        return self.quad_truncated_moment(cap, 2)


@dataclass(frozen=True)
class UniformQuality(QualityDistribution):
    support_lo: float
    support_hi: float
    kind: ClassVar[str] = "uniform"

    def __post_init__(self):
        self._check_support()

    @property
    def width(self) -> float:
        return self.support_hi - self.support_lo

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.support_lo) & (x <= self.support_hi)
        out = np.where(inside, 1.0 / self.width, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.clip((x - self.support_lo) / self.width, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
            raise DomainError("quantile probability must lie in [0, 1]")
        out = self.support_lo + p * self.width
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.support_lo, self.support_hi, size)

    def truncated_first_moment(self, cap: float) -> float:
        cap = self._check_cap(cap)
        return 0.5 * (cap + self.support_lo)

    def truncated_second_moment(self, cap: float) -> float:
        cap = self._check_cap(cap)
        lo = self.support_lo
        return (cap * cap + cap * lo + lo * lo) / 3.0


FAMILIES = {"uniform": UniformQuality}


def make_distribution(kind: str, lo: float, hi: float) -> QualityDistribution:
    try:
        cls = FAMILIES[kind]
    except KeyError:
        raise DomainError(f"unknown distribution family {kind!r}") from None
    return cls(float(lo), float(hi))
