import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crowdsense.calibration import generate_complete_params
from crowdsense.errors import DomainError
from crowdsense.metrics import (
    TrialReport,
    approximation_ratio,
    binomial_se,
    error_probability_estimate,
    error_bound,
    mae,
    verify_budget,
    verify_ir,
)
from crowdsense.payment import expected_payment
from crowdsense.population import CostBounds, bne_profile_complete, expected_utility, sample_population
from crowdsense.quality import UniformQuality

U = UniformQuality(0.1, 4.0)


@pytest.mark.parametrize(
    "est, true, expected",
    [([1.0, 2.0], [1.0, 2.0], 0.0), ([2.0, 3.0, 4.0], [1.0, 2.0, 3.0], 1.0), ([1.0, -3.0], [0.0, 0.0], 2.0)],
)
def test_mae_examples(est, true, expected):
    assert mae(est, true) == pytest.approx(expected)


def test_mae_shape_mismatch():
    with pytest.raises(DomainError):
        mae([1.0], [1.0, 2.0])


vec = arrays(float, 6, elements=st.floats(-1e3, 1e3))


@given(vec, vec, st.floats(-1e3, 1e3), st.floats(0.01, 100))
def test_mae_translation_and_scale(est, true, shift, scale):
    base = mae(est, true)
    assert mae(est + shift, true + shift) == pytest.approx(base, rel=1e-9, abs=1e-6)
    assert mae(est * scale, true * scale) == pytest.approx(base * scale, rel=1e-9, abs=1e-9)


def test_error_bound_examples():
    assert error_bound([1.0], 1.0) == pytest.approx(0.79788, abs=1e-5)
    assert error_bound([0.4, 0.6], 1.0) == pytest.approx(math.sqrt(2 / math.pi))
    assert error_bound([], 1.0) == 0.0
    assert error_bound([10.0], 1.0) == 1.0
    assert error_bound([10.0], 1.0, cap=False) == pytest.approx(7.9788, abs=1e-4)
    with pytest.raises(DomainError):
        error_bound([1.0], 0.0)


def test_error_probability_examples():
    assert error_probability_estimate([0.1, 0.2], 1.0) == 0.0
    assert error_probability_estimate([0.5, 1.5], 1.0) == 0.5
    assert error_probability_estimate([0.0, 0.3], 0.0) == 1.0
    with pytest.raises(DomainError):
        error_probability_estimate([], 1.0)
    assert binomial_se(0.5, 100) == pytest.approx(0.05)


def test_verify_ir_at_equilibrium_and_off_equilibrium():
    pop = sample_population(40, U, (5, 10), CostBounds(0.5, 1.0, 10.0, 12.0), seed=4)
    delta_t = 1.0
    params = generate_complete_params(pop, delta_t, U, 1e7)
    ref = U.truncated_second_moment(delta_t)
    prof = bne_profile_complete(pop, delta_t)
    inside = [w for w in pop if prof.strategy(w.id) is not None]
    outside = [w for w in pop if prof.strategy(w.id) is None]
    assert inside and outside
    ok = verify_ir([expected_utility(w, w.delta_lo, params.worker(w.id), ref) for w in inside])
    assert ok and ok.margin >= -1e-9
    forced = [expected_utility(w, w.delta_lo, params.worker(w.id), ref) for w in outside]
    bad = verify_ir(forced)
    assert not bad and bad.detail["violations"] == len(outside)


def test_verify_ir_empty():
    v = verify_ir([])
    assert v.passed and v.detail["participants"] == 0


def test_verify_budget():
    pop = sample_population(40, U, (5, 10), CostBounds(0.5, 1.0, 10.0, 12.0), seed=4)
    delta_t = 1.0
    ref = U.truncated_second_moment(delta_t)
    need = float(np.sum(generate_complete_params(pop, delta_t, U, 1e7).b - 2 * (pop.cost_slope / 0.2) * 0.01))
    params = generate_complete_params(pop, delta_t, U, need)
    prof = bne_profile_complete(pop, delta_t)
    total = sum(expected_payment(*params.worker(w.id), w.delta_lo, ref) for w in pop if prof.strategy(w.id))
    assert verify_budget(total, params.budget)
    inflated = total + 5.0
    v = verify_budget(inflated, total)
    assert not v and v.detail["overshoot"] == pytest.approx(5.0)
    assert verify_budget(0.0, 1.0)


def test_verify_budget_realized_summary():
    v = verify_budget(10.0, 12.0, realized_totals=[9.0, 11.0, 13.0])
    r = v.detail["realized"]
    assert r["n"] == 3 and r["mean"] == pytest.approx(11.0) and r["over_budget_fraction"] == pytest.approx(1 / 3)
    assert r["se"] == pytest.approx(2.0 / math.sqrt(3))


def test_trial_report_ratio():
    rep = TrialReport("theseus", 120, 0, 120, 30, 0.1, 3, 0.6, 0.15)
    assert rep.ratio == pytest.approx(4.0)
    assert approximation_ratio(1.0, 0.0) == math.inf
