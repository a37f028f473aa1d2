import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from crowdsense.errors import DomainError
from crowdsense.quality import QualityDistribution, UniformQuality, adaptive_simpson, make_distribution

U = UniformQuality(0.1, 4.0)


class RampQuality(QualityDistribution):
    """Density proportional to x on [lo, hi]; exercises the quadrature path."""

    kind = "ramp"

    def __init__(self, lo, hi):
        self.support_lo, self.support_hi = lo, hi
        self._check_support()
        self._z = (hi * hi - lo * lo) / 2

    def pdf(self, x):
        return x / self._z if self.support_lo <= x <= self.support_hi else 0.0

    def cdf(self, x):
        x = min(max(x, self.support_lo), self.support_hi)
        return (x * x - self.support_lo**2) / 2 / self._z

    def quantile(self, p):
        return math.sqrt(self.support_lo**2 + 2 * self._z * p)


def test_pdf_values():
    assert U.pdf(2.0) == pytest.approx(1 / 3.9)
    assert U.pdf(5.0) == 0.0
    assert U.pdf(0.1) == pytest.approx(0.25641, abs=1e-5)


def test_pdf_integrates_to_one():
    assert integrate.quad(U.pdf, 0.1, 4.0, epsabs=1e-13)[0] == pytest.approx(1.0, abs=1e-9)
    ramp = RampQuality(0.5, 3.0)
    assert adaptive_simpson(ramp.pdf, 0.5, 3.0) == pytest.approx(1.0, abs=1e-9)


def test_cdf_ends_and_monotone():
    assert U.cdf(0.1) == 0.0 and U.cdf(4.0) == 1.0
    xs = np.linspace(-1, 6, 500)
    assert np.all(np.diff(U.cdf(xs)) >= 0)


@pytest.mark.parametrize("p, expected", [(0.5, 2.05), (0.0, 0.1), (0.017557, 0.168473)])
def test_quantile(p, expected):
    assert U.quantile(p) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        U.quantile(p)


@given(st.floats(0.1001, 3.999))
def test_quantile_inverts_cdf(x):
    assert U.quantile(U.cdf(x)) == pytest.approx(x, abs=1e-9)


def test_second_moment_examples():
    assert U.truncated_second_moment(4.0) == pytest.approx(5.47, abs=1e-12)
    assert U.truncated_second_moment(0.2) == pytest.approx(0.0233333, abs=1e-7)
    tiny = UniformQuality(0.1, 0.1 + 1e-9)
    assert tiny.truncated_second_moment(0.1 + 1e-9) == pytest.approx(0.01, abs=1e-9)


def test_first_moment_examples():
    assert U.truncated_first_moment(4.0) == pytest.approx(2.05)
    assert U.truncated_first_moment(0.1042) == pytest.approx(0.1021, abs=1e-12)
    assert U.truncated_first_moment(0.1 + 1e-12) == pytest.approx(0.1, abs=1e-11)


@pytest.mark.parametrize("cap", [0.1, 0.05])
def test_moment_at_or_below_support_lo_is_error(cap):
    with pytest.raises(DomainError):
        U.truncated_second_moment(cap)
    with pytest.raises(DomainError):
        U.truncated_first_moment(cap)


@pytest.mark.parametrize("cap", [0.1000001, 0.2, 0.77, 2.0, 4.0])
def test_quadrature_matches_uniform_closed_form(cap):
    assert U.quad_truncated_moment(cap, 1) == pytest.approx((cap + 0.1) / 2, abs=1e-8)
    assert U.quad_truncated_moment(cap, 2) == pytest.approx((cap * cap + 0.1 * cap + 0.01) / 3, abs=1e-8)


@pytest.mark.parametrize("cap", [0.6, 1.3, 3.0])
def test_generic_family_against_scipy(cap):
    ramp = RampQuality(0.5, 3.0)
    mass = integrate.quad(ramp.pdf, 0.5, cap, epsabs=1e-14, epsrel=1e-13)[0]
    for power, method in [(1, ramp.truncated_first_moment), (2, ramp.truncated_second_moment)]:
        num = integrate.quad(lambda u: u**power * ramp.pdf(u), 0.5, cap, epsabs=1e-14, epsrel=1e-13)[0]
        assert method(cap) == pytest.approx(num / mass, rel=1e-9)


@settings(max_examples=200)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.0001, 1.0))
def test_moment_invariants(lo, width, frac):
    d = UniformQuality(lo, lo + width)
    cap = lo + frac * width
    r, a = d.truncated_first_moment(cap), d.truncated_second_moment(cap)
    assert lo - 1e-12 <= r <= cap + 1e-12
    assert r * r <= a + 1e-12
    cap2 = min(cap + 0.1 * width, lo + width)
    assert d.truncated_first_moment(cap2) >= r - 1e-12
    assert d.truncated_second_moment(cap2) >= a - 1e-12


def test_sampling_mean():
    draws = U.sample(np.random.default_rng(1), 10_000)
    assert draws.min() >= 0.1 and draws.max() <= 4.0
    assert abs(draws.mean() - 2.05) < 0.05


def test_bad_support_and_family():
    with pytest.raises(DomainError):
        UniformQuality(0.0, 1.0)
    with pytest.raises(DomainError):
        UniformQuality(2.0, 1.0)
    with pytest.raises(DomainError):
        make_distribution("beta", 0.1, 1.0)
