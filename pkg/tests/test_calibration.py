import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdsense.calibration import (
    COMPLETE,
    INCOMPLETE,
    GuaranteeTargets,
    Infeasible,
    NoSolution,
    approx_upper_bound,
    calibrate,
    check_conditions,
    generate_complete_params,
    generate_incomplete_params,
    incomplete_interval,
    incomplete_min_slope,
    participation_lower_bound,
    ratio_guarantee_gap,
    threshold_interval,
)
from crowdsense.errors import DomainError
from crowdsense.payment import PaymentParams
from crowdsense.population import CostBounds, WorkerProfile, sample_population
from crowdsense.quality import UniformQuality

U = UniformQuality(0.1, 4.0)
COSTS = CostBounds(0.5, 1.0, 10.0, 12.0)
TARGETS = GuaranteeTargets(0.9, 5.0, 0.1)


def uniform_root(lo, hi, s, alpha, beta):
    """Closed-form root of the gap function when the first moment is (x + lo)/2."""
    k = math.sqrt(-2.0 / (s * math.log(beta)))
    return k * (alpha * lo - s * lo / 2) / (1 + k * s / 2)


def test_participation_bound_table_setting():
    p = 1 - 0.1 ** (1 / 130)
    assert p == pytest.approx(0.0175563, abs=1e-7)
    expected = 0.1 + 3.9 * p
    assert participation_lower_bound(U, 130, 0.9) == pytest.approx(expected, abs=1e-12)
    assert participation_lower_bound(U, 130, 0.9) == pytest.approx(0.168469, abs=1e-6)


def test_participation_bound_single_worker_and_limit():
    assert participation_lower_bound(U, 1, 0.9) == pytest.approx(3.61)
    assert participation_lower_bound(U, 50, 1e-15) == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("theta, s", [(0.0, 5), (1.0, 5), (0.5, 0)])
def test_participation_bound_domain(theta, s):
    with pytest.raises(DomainError):
        participation_lower_bound(U, s, theta)


@settings(max_examples=100)
@given(st.integers(1, 500), st.floats(0.01, 0.99))
def test_participation_bound_guarantee_identity(s, theta):
    x = participation_lower_bound(U, s, theta)
    assert 1 - (1 - U.cdf(x)) ** s == pytest.approx(theta, abs=1e-9)


def test_upper_bound_small_population():
    k = math.sqrt(-2.0 / (3 * math.log(0.1)))
    g = ratio_guarantee_gap(U, 3, TARGETS)
    assert 1 + 1.5 * k == pytest.approx(1.80712, abs=1e-5)
    assert g(0.5) == pytest.approx(1.80712 * 0.5 - 0.188328, abs=1e-5)
    root = approx_upper_bound(U, 3, TARGETS)
    assert root == pytest.approx(uniform_root(0.1, 4.0, 3, 5.0, 0.1), abs=1e-9)
    assert root == pytest.approx(0.10421, abs=1e-5)


def test_upper_bound_no_solution_at_table_size():
    out = approx_upper_bound(U, 130, TARGETS)
    assert isinstance(out, NoSolution) and not out
    assert out.g_lo == pytest.approx(1.12175, abs=1e-4)
    assert not out.everywhere_feasible
    d = out.to_dict()
    assert d["sign_lo"] == 1 and d["sign_hi"] == 1


def test_upper_bound_everywhere_feasible():
    out = approx_upper_bound(U, 2, GuaranteeTargets(0.9, 1000.0, 0.1))
    assert isinstance(out, NoSolution) and out.everywhere_feasible
    lower, upper, draw_upper, guaranteed = threshold_interval(U, 2, GuaranteeTargets(0.9, 1000.0, 0.1))
    assert draw_upper == 4.0 and guaranteed


@settings(max_examples=50)
@given(st.integers(2, 6), st.floats(1.5, 8.0), st.floats(0.0, 4.0))
def test_upper_bound_monotone_in_alpha(s, alpha, extra):
    r1 = approx_upper_bound(U, s, GuaranteeTargets(0.9, alpha, 0.1))
    r2 = approx_upper_bound(U, s, GuaranteeTargets(0.9, alpha + extra, 0.1))
    if not isinstance(r1, NoSolution) and not isinstance(r2, NoSolution):
        assert r2 >= r1 - 1e-9


def test_upper_bound_large_s_no_solution():
    for s in (20, 60, 200):
        assert U.truncated_first_moment(0.1 + 1e-9) * s > 5 * 0.1
        assert isinstance(approx_upper_bound(U, s, TARGETS), NoSolution)


def test_fallback_interval_flags_missing_guarantee():
    lower, upper, draw_upper, guaranteed = threshold_interval(U, 130, TARGETS)
    assert isinstance(upper, NoSolution) and draw_upper == 4.0 and not guaranteed
    _, _, draw_upper, _ = threshold_interval(U, 130, TARGETS, fallback_upper=1.0)
    assert draw_upper == 1.0


@pytest.mark.parametrize("kw", [dict(theta=1.0), dict(alpha_ratio=1.0), dict(beta=0.0)])
def test_targets_validation(kw):
    with pytest.raises(DomainError):
        GuaranteeTargets(**kw)


def test_complete_params_example():
    w = WorkerProfile("w", 0.15, 6.0, 1.0, 2.0)
    params = generate_complete_params([w], 0.2, U, 1e6)
    assert params.a[0] == pytest.approx(5.0)
    assert params.b[0] == pytest.approx(2.116667, abs=1e-6)


def test_complete_params_infeasible():
    w = WorkerProfile("w", 0.15, 6.0, 1.0, 2.0)
    need = 2.116666666666 - 2 * 5 * 0.01
    out = generate_complete_params([w], 0.2, U, 1.0)
    assert isinstance(out, Infeasible) and not out
    assert out.min_budget == pytest.approx(need, abs=1e-9)
    assert out.shortfall == pytest.approx(need - 1.0, abs=1e-9)


def test_complete_params_domain():
    w = WorkerProfile("w", 0.15, 6.0, 1.0, 2.0)
    with pytest.raises(DomainError):
        generate_complete_params([w], 0.1, U, 1e6)


def test_incomplete_interval_example():
    cb = CostBounds(1.0, 1.0, 2.0, 2.0)
    lower, upper = incomplete_interval(5.0, cb, 0.15, 0.2, U)
    assert lower == pytest.approx(2.0791667, abs=1e-7)
    assert upper == pytest.approx(2.1166667, abs=1e-7)
    assert incomplete_min_slope(cb, 0.15, 0.2, U) == pytest.approx(5.0)


def test_incomplete_slope_raised_to_crossing():
    cb = CostBounds(0.5, 1.0, 10.0, 12.0)
    dl, dh = 1.0, 1.1
    crossing = (1.0 * dh - 0.5 * dl + 12.0 - 10.0) / (dh**2 - dl**2)
    assert crossing > 1.0 / (2 * 0.1)
    a = incomplete_min_slope(cb, dl, dh, U)
    assert a == pytest.approx(crossing)
    lower, upper = incomplete_interval(a, cb, dl, dh, U)
    assert lower == pytest.approx(upper, rel=1e-12)
    lower, upper = incomplete_interval(0.9 * a, cb, dl, dh, U)
    assert lower > upper


def test_incomplete_degenerate_limit_matches_complete():
    cb = CostBounds(1.0, 1.0, 2.0, 2.0)
    w = WorkerProfile("w000", 0.15, 6.0, 1.0, 2.0)
    complete = generate_complete_params([w], 0.2, U, 1e6)
    for eps in (1e-3, 1e-5, 1e-7):
        inc = generate_incomplete_params(1, cb, 0.2 - eps, 0.2, U, 1e6)
        assert inc.b[0] == pytest.approx(complete.b[0], abs=5 * eps)


def test_incomplete_domain():
    with pytest.raises(DomainError):
        generate_incomplete_params(3, COSTS, 0.5, 0.4, U, 1e6)


def test_constructed_violations():
    pop = sample_population(10, U, (5, 10), COSTS, seed=1)
    params = generate_complete_params(pop, 0.5, U, 1e6)
    half = PaymentParams(params.worker_ids, params.a / 2, params.b, params.budget)
    verdicts = {v.name: v for v in check_conditions(half, U, COMPLETE, workers=pop, delta_t=0.5)}
    assert not verdicts["slope_floor"].satisfied and verdicts["slope_floor"].margin < 0
    assert verdicts["slope_floor"].worker in pop.ids
    slack = float(np.sum(2 * params.a * 0.01))
    budget = float(np.sum(params.b)) - slack
    tight = params.with_budget(budget)
    assert all(v.satisfied for v in check_conditions(tight, U, COMPLETE, workers=pop, delta_t=0.5))
    bumped = PaymentParams(params.worker_ids, params.a, params.b + (slack + 1.0) / 10, budget)
    verdicts = {v.name: v for v in check_conditions(bumped, U, COMPLETE, workers=pop, delta_t=0.5)}
    assert not verdicts["budget"].satisfied
    assert verdicts["budget"].margin == pytest.approx(-(slack + 1.0))


def test_incomplete_constructed_violation():
    params = generate_incomplete_params(5, COSTS, 0.5, 1.0, U, 1e6)
    kw = dict(cost_bounds=COSTS, delta_l=0.5, delta_h=1.0)
    assert all(v.satisfied for v in check_conditions(params, U, INCOMPLETE, **kw))
    low = PaymentParams(params.worker_ids, params.a, params.b - 0.5, params.budget)
    verdicts = {v.name: v for v in check_conditions(low, U, INCOMPLETE, **kw)}
    assert not verdicts["intercept_lower"].satisfied
    assert verdicts["intercept_lower"].margin == pytest.approx(-0.5)


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(1, 40),
    st.integers(0, 2**31),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
    st.booleans(),
)
def test_generator_checker_round_trip(n, seed, u1, u2, complete):
    pop = sample_population(n, U, (5, 10), COSTS, seed=seed)
    if complete:
        delta_t = 0.1 + 3.9 * max(u1, 1e-6)
        out = generate_complete_params(pop, delta_t, U, 1e7)
        params = out.params if isinstance(out, Infeasible) else out
        verdicts = check_conditions(params, U, COMPLETE, workers=pop, delta_t=delta_t)
    else:
        dl = 0.1 + 3.9 * min(u1, u2)
        dh = 0.1 + 3.9 * max(u1, u2)
        if not dh > dl:
            return
        out = generate_incomplete_params(n, COSTS, dl, dh, U, 1e7, ids=pop.ids)
        params = out.params if isinstance(out, Infeasible) else out
        verdicts = check_conditions(params, U, INCOMPLETE, cost_bounds=COSTS, delta_l=dl, delta_h=dh)
    by_name = {v.name: v for v in verdicts}
    assert all(v.satisfied for name, v in by_name.items() if name != "budget"), verdicts
    assert by_name["budget"].satisfied == (not isinstance(out, Infeasible))


def test_calibrate_report_json():
    pop = sample_population(130, U, (5, 10), COSTS, seed=0)
    rep = calibrate(pop, U, TARGETS, 50_000.0, COMPLETE, rng=np.random.default_rng(0))
    assert rep.delta_lower == pytest.approx(0.1684694, abs=1e-7)
    assert not rep.guarantee_available
    assert rep.delta_lower <= rep.thresholds["delta_t"] <= 4.0
    d = json.loads(rep.to_json())
    assert d["delta_upper"]["no_solution"] and len(d["params"]) == 130
    assert d["feasible"] == rep.feasible


def test_calibrate_incomplete_with_explicit_thresholds():
    pop = sample_population(20, U, (5, 10), COSTS, seed=3)
    rep = calibrate(pop, U, TARGETS, 1e6, INCOMPLETE, cost_bounds=COSTS,
                    thresholds={"delta_l": 0.5, "delta_h": 1.5})
    assert rep.feasible and rep.ref_second_moment_cap == 1.5
    assert len(set(rep.params.a)) == 1 and len(set(rep.params.b)) == 1
