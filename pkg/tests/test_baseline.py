import math
import statistics
import warnings

import numpy as np
import pytest

from baseline import BASELINE_LABEL, BaselineError, StepRule, barrier_gradient, lbsgd_baseline
from oracle import FiniteDifferenceOracle, NoiseModel, NoisyOracle, NoisyValueOracle, QueryLedger
from problem import eval_true
from scsa import Outcome, ScsaConfig, scsa_solve
from verify import audit_trace, best_gap_curve


def test_step_rule():
    assert StepRule(0.1)(9) == 0.1
    assert StepRule(0.1, "sqrt")(4) == pytest.approx(0.05)
    with pytest.raises(BaselineError):
        StepRule(0.0)
    with pytest.raises(BaselineError):
        StepRule(0.1, "harmonic")


def test_barrier_gradient():
    grad = barrier_gradient(np.array([1.0, 0.0]), np.array([0.0, 2.0]), -0.5, 0.1)
    assert np.allclose(grad, [1.0, 0.4])


@pytest.mark.parametrize("barrier_eta,budget", [(0.0, 100), (0.1, 0)])
def test_rejects_invalid_arguments(quadratic, rng, barrier_eta, budget):
    with pytest.raises(BaselineError):
        lbsgd_baseline(quadratic, NoisyOracle(quadratic, NoiseModel()), barrier_eta, StepRule(),
                       budget, rng)


@pytest.fixture
def baseline_run(quadratic, rng):
    oracle = NoisyOracle(quadratic, NoiseModel(), QueryLedger("lbsgd"))
    trace = lbsgd_baseline(quadratic, oracle, 0.1, StepRule(0.05), 20000, rng)
    return quadratic, oracle, trace


def test_baseline_respects_budget(baseline_run):
    _, oracle, trace = baseline_run
    assert trace.outcome in (Outcome.BUDGET_EXCEEDED.value, Outcome.BOUNDARY_STOP.value)
    assert oracle.calls <= 20000
    assert trace.total_calls == oracle.calls
    assert trace.diagnostics["algorithm"] == BASELINE_LABEL


def test_baseline_steps_stay_in_safety_ball(baseline_run):
    _, _, trace = baseline_run
    points = [state.x_t for state in trace.records] + [trace.x_final]
    for state, nxt in zip(trace.records, points[1:]):
        assert np.linalg.norm(nxt - state.x_t) <= state.safety_radius_t * (1.0 + 1e-9)
        assert state.lambda_t == 0.1


def test_baseline_is_safe(baseline_run):
    spec, oracle, trace = baseline_run
    report = audit_trace(trace, oracle.ledger, spec)
    assert report.violations == 0
    assert report.safety_ball_breaches == 0
    assert eval_true(spec, trace.x_final)[1].value < 0


def test_baseline_approaches_the_optimum(baseline_run):
    spec, _, trace = baseline_run
    assert best_gap_curve(trace, spec, [20000])[0] <= 0.5


class BoundaryOracle(NoisyOracle):
    """Reports every point as lying on the constraint boundary."""

    def sample_values(self, x, n, rng):
        f_value, _ = super().sample_values(x, n, rng)
        return f_value, 0.0


def test_baseline_stops_at_the_boundary(quadratic, rng):
    trace = lbsgd_baseline(quadratic, BoundaryOracle(quadratic, NoiseModel()), 0.1, StepRule(), 100, rng)
    assert trace.outcome == Outcome.BOUNDARY_STOP.value
    assert len(trace.records) == 1
    assert trace.records[0].safety_radius_t == 0.0
    assert np.array_equal(trace.x_final, quadratic.x_start)


def test_finite_difference_baseline_respects_budget(quadratic, rng):
    oracle = FiniteDifferenceOracle(NoisyValueOracle(quadratic, NoiseModel(0.01), QueryLedger("fd")), 1e-3)
    trace = lbsgd_baseline(quadratic, oracle, 0.1, StepRule(0.05), 5000, rng)
    assert trace.outcome in (Outcome.BUDGET_EXCEEDED.value, Outcome.BOUNDARY_STOP.value)
    assert trace.total_calls == oracle.calls <= 5000
    assert audit_trace(trace, oracle.ledger, quadratic).violations == 0


def _final_best_gap(trace, spec, budget):
    gap = best_gap_curve(trace, spec, [budget])[0]
    return math.inf if math.isnan(gap) else gap


@pytest.mark.slow
def test_scsa_is_not_worse_than_the_baseline(quadratic):
    budget = 10 ** 5
    scsa_gaps = []
    baseline_gaps = []
    for seed in range(10):
        oracle = NoisyOracle(quadratic, NoiseModel(0.1, 0.1))
        result = scsa_solve(quadratic, oracle, ScsaConfig(max_oracle_calls=budget), np.random.default_rng(seed))
        scsa_gaps.append(_final_best_gap(result.trace, quadratic, budget))
        oracle = NoisyOracle(quadratic, NoiseModel(0.1, 0.1))
        trace = lbsgd_baseline(quadratic, oracle, 0.1, StepRule(0.05), budget, np.random.default_rng(seed))
        baseline_gaps.append(_final_best_gap(trace, quadratic, budget))
    scsa_median = statistics.median(scsa_gaps)
    baseline_median = statistics.median(baseline_gaps)
    if scsa_median > baseline_median:
        warnings.warn(f"SCSA median gap {scsa_median:.4g} above {BASELINE_LABEL} {baseline_median:.4g}")
    assert math.isfinite(scsa_median)
