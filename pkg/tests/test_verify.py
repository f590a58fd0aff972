import dataclasses
import math

import numpy as np
import pytest

from oracle import NoiseModel, NoisyOracle, QueryLedger
from problem import make_nonconvex_benchmark, make_quadratic_benchmark
from scsa import DualState, ScsaConfig, scsa_solve
from trace_manager import RunTrace
from verify import (VerifyError, audit_trace, best_gap_curve, check_dual_regularity,
                    complexity_ratio, dual_curvature_bound, dual_gradient, dual_opt_bisection,
                    dual_value, log_spaced_budgets, max_regularized_depth)


def _state(x, lam, lam_next=None, round_index=1, radius=0.25, cumulative=0, calls=0):
    return DualState(1, np.asarray(x, dtype=float), lam, -4.0, 0.01, 0.5, radius, cumulative,
                     lam if lam_next is None else lam_next, 1, calls, round_index, -1)


def test_dual_value_at_the_optimal_multiplier(quadratic):
    value, x = dual_value(quadratic, quadratic.lambda_star)
    assert value == pytest.approx(quadratic.f_star, abs=1e-9)
    assert np.allclose(x, quadratic.x_star, atol=1e-8)
    assert dual_gradient(quadratic, quadratic.lambda_star) == pytest.approx(0.0, abs=1e-9)


def test_dual_value_rejects_invalid(quadratic):
    with pytest.raises(VerifyError):
        dual_value(quadratic, -0.1)
    with pytest.raises(VerifyError):
        dual_value(make_nonconvex_benchmark(2, 0.5), 1.0)


def test_dual_value_raises_when_the_certificate_fails(quadratic):
    spec = dataclasses.replace(quadratic, objective=lambda x: (float(x @ x), np.array([1.0, 0.0])))
    with pytest.raises(VerifyError, match="certificate"):
        dual_value(spec, 0.0)


def test_dual_value_certifies_the_closed_form_minimizer(quadratic):
    for lam in (0.0, 0.875, 4.5):
        _, x = dual_value(quadratic, lam)
        assert np.allclose(x, [0.0, (5.0 + 2.0 * lam) / (1.0 + 4.0 * lam)], atol=1e-8)


def test_bisection_recovers_multiplier(quadratic):
    assert dual_opt_bisection(quadratic, 4.5) == pytest.approx(0.875, abs=1e-6)


def test_bisection_interior_optimum():
    spec = make_quadratic_benchmark(2, target=[0.0, 0.6])
    assert dual_opt_bisection(spec, 1.1025) == 0.0


def test_bisection_needs_a_bracket(quadratic):
    with pytest.raises(VerifyError):
        dual_opt_bisection(quadratic, 0.5)
    with pytest.raises(VerifyError):
        dual_opt_bisection(quadratic, 4.5, tol=0.0)


def test_dual_curvature_bound(quadratic):
    assert dual_curvature_bound(quadratic, 0.875) == pytest.approx(16.0 / 9.0)
    spec = make_nonconvex_benchmark(2, 0.5)
    l = spec.beta / (2.0 * spec.R)
    assert dual_curvature_bound(spec, 0.0) == pytest.approx(l ** 2 / spec.M_f)


def test_quadratic_dual_is_regular(quadratic):
    grid = np.linspace(0.875, 4.5, 8)
    report = check_dual_regularity(quadratic, grid)
    assert report.passed, report.failures
    assert report.smoothness_envelope == 64.0
    assert len(report.slopes) == 7
    assert all(slope <= 0 for slope in report.slopes)
    # the curvature bound is tight for this problem
    assert report.curvatures[0] == pytest.approx(-64.0 / 9.0, rel=1e-3)
    assert report.to_dict()["passed"]


@pytest.mark.parametrize("grid", [[0.5, 1.0], [1.0, 5.0], [1.0]])
def test_regularity_grid_bounds(quadratic, grid):
    with pytest.raises(VerifyError):
        check_dual_regularity(quadratic, grid)


def test_regularity_needs_strong_convexity():
    with pytest.raises(VerifyError):
        check_dual_regularity(make_nonconvex_benchmark(2, 0.5), [0.0, 1.0])


def test_max_regularized_depth(quadratic):
    assert max_regularized_depth(quadratic, quadratic.x_start, 16.0) == pytest.approx(4.0)
    with pytest.raises(VerifyError):
        max_regularized_depth(quadratic, quadratic.x_start, 8.0)


def test_audit_of_a_real_run_is_clean(quadratic, rng):
    oracle = NoisyOracle(quadratic, NoiseModel(), QueryLedger("audit"))
    trace = scsa_solve(quadratic, oracle, ScsaConfig(max_outer=5), rng).trace
    report = audit_trace(trace, oracle.ledger, quadratic)
    assert report.clean
    assert report.total_queries == len(oracle.ledger)
    assert report.total_samples == oracle.ledger.total
    assert report.worst_g < 0


def test_audit_counts_violations(quadratic):
    ledger = QueryLedger("run")
    ledger.append(np.array([0.0, 0.5]), 1)
    ledger.append(np.array([0.0, 3.0]), 2)
    report = audit_trace(RunTrace(run_id="run"), ledger, quadratic)
    assert report.violations == 1
    assert report.worst_g == pytest.approx(21.0)
    assert report.total_samples == 3
    assert not report.clean


def test_audit_flags_ball_breaches(quadratic):
    ledger = QueryLedger("run")
    ledger.ball = 0
    ledger.append(np.array([0.0, 0.6]), 1)
    ledger.append(np.array([0.0, 1.0]), 1)
    ledger.ball = 4
    ledger.append(np.array([0.0, 0.5]), 1)
    trace = RunTrace(run_id="run", records=[_state([0.0, 0.5], 1.0)])
    report = audit_trace(trace, ledger, quadratic)
    assert report.violations == 0
    assert report.safety_ball_breaches == 2


def test_audit_stencil_radius_tolerance(quadratic):
    ledger = QueryLedger("run")
    ledger.ball = 0
    ledger.append(np.array([0.0, 0.7505]), 1)
    trace = RunTrace(run_id="run", records=[_state([0.0, 0.5], 1.0)])
    assert audit_trace(trace, ledger, quadratic).safety_ball_breaches == 1
    trace.diagnostics["stencil_radius"] = 1e-3
    assert audit_trace(trace, ledger, quadratic).safety_ball_breaches == 0


def test_audit_checks_dual_monotonicity_per_round(quadratic):
    ledger = QueryLedger("run")
    rising = RunTrace(run_id="run", records=[_state([0.0, 0.5], 1.0), _state([0.0, 0.5], 2.0)])
    assert not audit_trace(rising, ledger, quadratic).lambda_monotone
    restarted = RunTrace(run_id="run", records=[_state([0.0, 0.5], 1.0),
                                                _state([0.0, 0.5], 2.0, round_index=2)])
    assert audit_trace(restarted, ledger, quadratic).lambda_monotone
    bad_step = RunTrace(run_id="run", records=[_state([0.0, 0.5], 1.0, lam_next=1.5)])
    assert not audit_trace(bad_step, ledger, quadratic).lambda_monotone


def test_audit_accepts_loaded_records(quadratic):
    ledger = QueryLedger("run")
    ledger.ball = 0
    ledger.append(np.array([0.0, 0.6]), 1)
    record = {"x_t": [0.0, 0.5], "safety_radius_t": 0.25, "lambda_t": 1.0, "lambda_next": 0.9, "round": 1}
    assert audit_trace(RunTrace(run_id="run", records=[record]), ledger, quadratic).clean


def test_audit_rejects_foreign_ledger(quadratic):
    with pytest.raises(VerifyError):
        audit_trace(RunTrace(run_id="a"), QueryLedger("b"), quadratic)


def test_best_gap_curve(quadratic):
    trace = RunTrace(records=[_state([0.0, 0.5], 1.0, cumulative=10, calls=10),
                              _state([0.0, 3.0], 1.0, cumulative=30, calls=20)],
                     x_final=np.array([0.0, 1.5]), total_calls=100)
    curve = best_gap_curve(trace, quadratic, [0, 50, 100])
    assert curve == pytest.approx([8.0, 8.0, 0.0])


def test_best_gap_curve_before_first_feasible_point(quadratic):
    trace = RunTrace(records=[_state([0.0, 3.0], 1.0, cumulative=5, calls=5)])
    curve = best_gap_curve(trace, quadratic, [10, 20])
    assert all(math.isnan(v) for v in curve)


def test_complexity_ratio(quadratic):
    trace = RunTrace(total_calls=1000)
    ratio = complexity_ratio(trace, quadratic, 0.1, 0.1, 0.1)
    assert ratio > 0 and math.isfinite(ratio)
    with pytest.raises(VerifyError):
        complexity_ratio(trace, quadratic, 0.0, 0.1, 0.1)


def test_log_spaced_budgets():
    budgets = log_spaced_budgets(100000)
    assert len(budgets) == 32
    assert budgets[0] == 100 and budgets[-1] == 100000
    assert budgets == sorted(budgets)
    assert log_spaced_budgets(50, points=3) == [50, 50, 50]
