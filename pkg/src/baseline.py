"""
SafePD Log-Barrier Baseline Module

Copyright (C) 2024 SafePD Team

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from oracle import FirstOrderOracle, estimate_constraint_ucb, ucb_batch_size
from problem import ProblemSpec
from scsa import DualState, Outcome
from trace_manager import RunTrace

BASELINE_LABEL = "lbsgd-simplified"
BOUNDARY_FLOOR = 1e-10

logger = logging.getLogger("safepd.baseline")


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class StepRule:
    """Base step size: constant, or decaying like 1/sqrt(t)."""

    base: float = 0.05
    decay: str = "constant"

    def __post_init__(self):
        if not self.base > 0:
            raise BaselineError(f"step base must be positive, got: {self.base}")
        if self.decay not in ("constant", "sqrt"):
            raise BaselineError(f"Unknown step decay: {self.decay}")

    def __call__(self, t: int) -> float:
        if self.decay == "sqrt":
            return self.base / math.sqrt(t)
        return self.base


def barrier_gradient(f_grad: np.ndarray, g_grad: np.ndarray, g_value: float,
                     barrier_eta: float) -> np.ndarray:
    """Gradient of f - barrier_eta * ln(-g)."""
    return f_grad + barrier_eta * g_grad / (-g_value)


def lbsgd_baseline(spec: ProblemSpec, oracle: FirstOrderOracle, barrier_eta: float,
                   step_rule: StepRule, budget: int, rng: np.random.Generator,
                   delta: float = 0.01, eps_floor: float = 1e-3) -> RunTrace:
    """SGD on the log-barrier surrogate with a step cap that cannot cross the boundary.

    Each step is at most -g_hat / (2 L_g) long, so it stays inside the same
    safety ball SCSA would use at that point.
    """
    if not barrier_eta > 0:
        raise BaselineError(f"barrier_eta must be positive, got: {barrier_eta}")
    if not budget > 0:
        raise BaselineError(f"budget must be positive, got: {budget}")

    trace = RunTrace(run_id=oracle.ledger.run_id)
    trace.diagnostics["algorithm"] = BASELINE_LABEL
    start = oracle.calls
    x = np.array(spec.x_start, dtype=float)
    g_prev = -spec.alpha
    t = 0
    outcome = None
    while outcome is None:
        eps_t = max(-g_prev / 8.0, eps_floor)
        step_cost = ucb_batch_size(oracle.noise.sigma, eps_t, budget, delta) + oracle.cost_per_sample
        if budget - (oracle.calls - start) < step_cost:
            outcome = Outcome.BUDGET_EXCEEDED
            break
        t += 1
        iteration_start = oracle.calls
        ball_id = len(trace.records)
        oracle.set_ball(ball_id)
        estimate = estimate_constraint_ucb(oracle, x, eps_t, budget, delta, rng)
        g_hat = estimate.g_hat
        radius = max(-g_hat / (2.0 * spec.L_g), 0.0)
        state = DualState(
            t=t, x_t=x.copy(), lambda_t=barrier_eta, g_hat_t=g_hat, eta_t=0.0, eps_t=eps_t,
            safety_radius_t=radius, cumulative_calls=0, lambda_next=barrier_eta,
            n_t=estimate.n_used, ball=ball_id,
        )
        trace.records.append(state)

        if g_hat >= -BOUNDARY_FLOOR:
            logger.warning(f"{BASELINE_LABEL}: boundary reached at t={t}, g_hat = {g_hat:.3g}")
            outcome = Outcome.BOUNDARY_STOP
        else:
            sample = oracle.query(x, rng)
            grad = barrier_gradient(sample.f_grad, sample.g_grad, g_hat, barrier_eta)
            grad_norm = float(np.linalg.norm(grad))
            gamma = step_rule(t)
            if grad_norm > 0:
                gamma = min(gamma, radius / grad_norm)
            x = x - gamma * grad
            g_prev = g_hat
        state.calls = oracle.calls - iteration_start
        state.cumulative_calls = oracle.calls

    oracle.set_ball(-1)
    trace.outcome = outcome.value
    trace.x_final = x
    trace.lambda_final = barrier_eta
    trace.total_calls = oracle.calls
    trace.diagnostics["iterations"] = len(trace.records)
    logger.info(f"{BASELINE_LABEL} finished: {outcome.value} after {len(trace.records)} steps")
    return trace
