"""
SafePD Inner Solver Module

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

Feasible-iterate inner solvers for the Lagrangian subproblems: projection
onto the safety ball, projected SGD inside the ball, and the
descent-enforcing minibatch SGD used for safe initialization.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from oracle import FirstOrderOracle
from problem import ProblemSpec

logger = logging.getLogger("safepd.inner")

DEFAULT_MAX_STEPS = 200000


class InnerSolverError(ValueError):
    """Exception raised for invalid inner-solver inputs."""
    pass


class Termination(Enum):
    GRADIENT_CRITERION = "GradientCriterion"
    BUDGET = "Budget"


@dataclass(frozen=True)
class Ball:
    """Euclidean ball used as the known feasible set of a primal solve."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise InnerSolverError(f"ball radius must be non-negative, got: {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def contains(self, x, tol: float = 1e-12) -> bool:
        return float(np.linalg.norm(np.asarray(x) - self.center)) <= self.radius + tol


@dataclass(frozen=True)
class LagrangianConstants:
    """Regularity constants of L(., lam) = f + lam * g that the inner solvers rely on."""

    mu_f: float
    M_f: float
    M_g: float
    G_f: float
    G_g: float
    mu_g: float = 0.0
    L_g: float = 0.0

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "LagrangianConstants":
        return cls(spec.mu_f, spec.M_f, spec.M_g, spec.G_f, spec.G_g, spec.mu_g, spec.L_g)

    def mu_L(self, lam: float) -> float:
        return self.mu_f + lam * self.mu_g

    def M_L(self, lam: float) -> float:
        return self.M_f + lam * self.M_g


@dataclass
class InnerReport:
    x_out: np.ndarray
    oracle_calls: int
    iterations: int
    target_eta: float
    terminated_by: Termination
    certified: bool = True


def project_ball(x, ball: Ball) -> np.ndarray:
    """Euclidean projection of x onto the ball."""
    x = np.asarray(x, dtype=float)
    offset = x - ball.center
    dist = float(np.linalg.norm(offset))
    if dist <= ball.radius:
        return x
    if ball.radius == 0 or dist == 0:
        return ball.center.copy()
    return ball.center + ball.radius * offset / dist


def _remaining(oracle: FirstOrderOracle, start_calls: int, max_calls: Optional[int]) -> float:
    if max_calls is None:
        return math.inf
    return max_calls - (oracle.calls - start_calls)


def shift_parameter(mu: float, M: float) -> int:
    """Step offset a = max(2, ceil(4 M / mu)) keeping the first SGD step below 1 / (2M)."""
    return max(2, math.ceil(4.0 * M / mu))


def sgd_budget(mu: float, M: float, sigma_L: float, eta: float, distance: float) -> int:
    """Smallest N whose shifted-step SGD bound mu a^2 D^2 / (N (N + c)) + 4 sigma^2 / (mu (N + c)) is <= eta.

    ``distance`` bounds the distance from the start to the ball minimizer;
    c = 2a - 3 with a the step offset.
    """
    a = shift_parameter(mu, M)
    c = 2.0 * a - 3.0
    linear = eta * c - 4.0 * sigma_L ** 2 / mu
    constant = mu * a ** 2 * distance ** 2
    root = (-linear + math.sqrt(linear ** 2 + 4.0 * eta * constant)) / (2.0 * eta)
    return max(1, math.ceil(root))


def psgd_solve(oracle: FirstOrderOracle, lam: float, ball: Ball, x_init, eta: float,
               constants: LagrangianConstants, rng: np.random.Generator,
               max_calls: Optional[int] = None, max_steps: Optional[int] = None) -> InnerReport:
    """Minimize L(., lam) over the ball to accuracy eta with every iterate inside the ball.

    Noiseless oracles run projected gradient descent with step 1/M_L and stop
    once the gradient mapping certifies ||G|| <= sqrt(2 mu_L eta). Noisy
    oracles run the a-priori budget of projected SGD steps 2/(mu_L (tau + a))
    (see ``sgd_budget``) and return the (tau + a - 1)-weighted average.
    """
    x = np.array(x_init, dtype=float)
    if not eta > 0:
        raise InnerSolverError(f"eta must be positive, got: {eta}")
    if not ball.contains(x, tol=1e-9 * (1.0 + ball.radius)):
        raise InnerSolverError("x_init lies outside the ball")
    x = project_ball(x, ball)
    mu = constants.mu_L(lam)
    M = constants.M_L(lam)
    if not mu > 0:
        raise InnerSolverError(f"Lagrangian is not strongly convex at lambda={lam}")

    start = oracle.calls
    cost = oracle.cost_per_sample
    step_cap = max_steps if max_steps is not None else DEFAULT_MAX_STEPS

    if oracle.noise.sigma_hat == 0:
        threshold = math.sqrt(2.0 * mu * eta)
        iterations = 0
        while _remaining(oracle, start, max_calls) >= cost:
            sample = oracle.query(x, rng)
            grad = sample.f_grad + lam * sample.g_grad
            x_next = project_ball(x - grad / M, ball)
            mapping = M * (x - x_next)
            if float(np.linalg.norm(mapping)) <= threshold:
                return InnerReport(x, oracle.calls - start, iterations, eta, Termination.GRADIENT_CRITERION)
            if iterations >= step_cap:
                break
            x = x_next
            iterations += 1
        logger.debug(f"psgd noiseless budget hit after {iterations} steps")
        return InnerReport(x, oracle.calls - start, iterations, eta, Termination.BUDGET, certified=False)

    sigma_L = math.sqrt(1.0 + lam ** 2) * oracle.noise.sigma_hat
    distance = ball.radius + float(np.linalg.norm(x - ball.center))
    n_inner = sgd_budget(mu, M, sigma_L, eta, distance)
    planned = min(n_inner, step_cap)
    if max_calls is not None:
        planned = min(planned, int(_remaining(oracle, start, max_calls)) // cost)
    planned = max(planned, 0)
    a = shift_parameter(mu, M)

    average = x.copy()
    weight_sum = 0.0
    for tau in range(planned):
        sample = oracle.query(x, rng)
        grad = sample.f_grad + lam * sample.g_grad
        x = project_ball(x - 2.0 / (mu * (tau + a)) * grad, ball)
        weight = tau + a - 1.0
        weight_sum += weight
        average += (weight / weight_sum) * (x - average)

    certified = planned >= n_inner
    x_out = project_ball(average, ball)
    return InnerReport(x_out, oracle.calls - start, planned, eta, Termination.BUDGET, certified=certified)


def descent_msgd(oracle: FirstOrderOracle, lambda_check: float, x0, eta_check: float,
                 constants: LagrangianConstants, rng: np.random.Generator,
                 max_calls: Optional[int] = None, max_steps: Optional[int] = None,
                 T_max: int = 1, delta: float = 0.01) -> InnerReport:
    """Unconstrained minimization of L(., lambda_check) that never increases the Lagrangian.

    The minibatch doubles while the standard error of the gradient estimate
    exceeds half its norm; a step is kept only if a fresh value estimate at
    the candidate does not rise by more than its confidence radius.
    Certification: ||grad|| <= sqrt(mu_L * eta_check) with a standard error
    no larger than that threshold.
    """
    if not eta_check > 0:
        raise InnerSolverError(f"eta_check must be positive, got: {eta_check}")
    lam = lambda_check
    mu = constants.mu_L(lam)
    M = constants.M_L(lam)
    if not mu > 0:
        raise InnerSolverError(f"Lagrangian is not strongly convex at lambda={lam}")

    start = oracle.calls
    cost = oracle.cost_per_sample
    step_cap = max_steps if max_steps is not None else DEFAULT_MAX_STEPS
    threshold = math.sqrt(mu * eta_check)
    gamma = 1.0 / M
    confidence = 1.0 + math.sqrt(2.0 * math.log(max(T_max, 1) / delta))
    grad_noise = math.sqrt(1.0 + lam ** 2) * oracle.noise.sigma_hat
    value_noise = math.sqrt(1.0 + lam ** 2) * oracle.noise.sigma

    x = np.array(x0, dtype=float)
    n = 1
    iterations = 0
    if _remaining(oracle, start, max_calls) < cost:
        return InnerReport(x, 0, 0, eta_check, Termination.BUDGET, certified=False)
    batch = oracle.query_batch(x, n, rng)
    while True:
        value = batch.f_value + lam * batch.g_value
        grad = batch.f_grad + lam * batch.g_grad
        grad_norm = float(np.linalg.norm(grad))
        std = grad_noise / math.sqrt(n)
        if grad_norm <= threshold and std <= threshold:
            return InnerReport(x, oracle.calls - start, iterations, eta_check, Termination.GRADIENT_CRITERION)
        if iterations >= step_cap or _remaining(oracle, start, max_calls) < 2 * n * cost:
            logger.info(f"descent_msgd stopped by budget after {iterations} steps")
            return InnerReport(x, oracle.calls - start, iterations, eta_check, Termination.BUDGET, certified=False)
        if std > grad_norm / 2.0:
            n *= 2
            batch = oracle.query_batch(x, n, rng)
            continue

        candidate = x - gamma * grad
        trial = oracle.query_batch(candidate, n, rng)
        trial_value = trial.f_value + lam * trial.g_value
        value_radius = value_noise * confidence / math.sqrt(n)
        if trial_value <= value + 2.0 * value_radius:
            x = candidate
            batch = trial
            iterations += 1
        elif value_noise == 0:
            gamma /= 2.0
        else:
            n *= 2
            batch = oracle.query_batch(x, n, rng)
