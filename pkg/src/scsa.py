"""
SafePD Strongly-Convex Safe Algorithm Module

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

This module implements the safe primal-dual method for strongly convex
problems: a descent-based safe dual initialization, confidence-bounded
constraint estimates, dual gradient steps that never increase the
multiplier, and primal solves restricted to a certified safety ball.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np

from inner import Ball, LagrangianConstants, descent_msgd, psgd_solve
from oracle import FirstOrderOracle, estimate_constraint_ucb, ucb_batch_size
from problem import ProblemSpec, eval_true
from trace_manager import RunTrace

logger = logging.getLogger("safepd.scsa")


class SafetyViolationError(RuntimeError):
    """Raised when a certified-negative constraint estimate turns out non-negative."""
    pass


class ScsaInputError(ValueError):
    """Exception raised for invalid SCSA inputs."""
    pass


class Outcome(Enum):
    CONVERGED = "Converged"
    LAMBDA_ZERO = "LambdaZero"
    BUDGET_EXCEEDED = "BudgetExceeded"
    HORIZON_REACHED = "HorizonReached"
    SAFETY_ABORT = "SafetyAbort"
    BOUNDARY_STOP = "BoundaryStop"
    OUTER_CAP_REACHED = "OuterCapReached"

    @property
    def converged(self) -> bool:
        return self in (Outcome.CONVERGED, Outcome.LAMBDA_ZERO)


@dataclass(frozen=True)
class ScsaConfig:
    """Targets and budgets of a solve.

    ``eps_floor`` defaults to eps_c / (8 lambda_check) once the initial dual
    is known; ``max_inner_steps`` caps the stochastic inner budget and
    ``max_outer`` the outer iterations (both None by default).
    """

    eps_p: float = 0.05
    eps_c: float = 0.05
    delta: float = 0.01
    max_oracle_calls: int = 10 ** 6
    eps_floor: Optional[float] = None
    max_inner_steps: Optional[int] = None
    max_outer: Optional[int] = None

    def __post_init__(self):
        if not (self.eps_p > 0 and self.eps_c > 0):
            raise ScsaInputError("eps_p and eps_c must be positive")
        if not 0 < self.delta < 1:
            raise ScsaInputError(f"delta must lie in (0, 1), got: {self.delta}")
        if not self.max_oracle_calls > 0:
            raise ScsaInputError("max_oracle_calls must be positive")
        if self.eps_floor is not None and not self.eps_floor > 0:
            raise ScsaInputError("eps_floor must be positive")

    def resolved(self, lambda_check: float) -> "ScsaConfig":
        if self.eps_floor is not None:
            return self
        return dataclasses.replace(self, eps_floor=self.eps_c / (8.0 * max(lambda_check, 1.0)))


@dataclass
class DualState:
    """One outer iteration. ``eta_t`` is the accuracy of the primal solve that follows."""

    t: int
    x_t: np.ndarray
    lambda_t: float
    g_hat_t: float
    eta_t: float
    eps_t: float
    safety_radius_t: float
    cumulative_calls: int
    lambda_next: float = 0.0
    n_t: int = 0
    calls: int = 0
    round: int = 1
    ball: int = -1


@dataclass(frozen=True)
class KKTResidual:
    grad_norm: float
    comp_slack: float
    lambda_nonneg: bool
    feasible: bool

    def satisfies(self, eps_p: float, eps_c: float) -> bool:
        return (self.grad_norm <= eps_p and self.comp_slack <= eps_c
                and self.lambda_nonneg and self.feasible)


class SolveResult(NamedTuple):
    x: np.ndarray
    lam: float
    trace: RunTrace


def initial_dual(delta_f: float, alpha: float) -> float:
    """lambda_check = delta_f / alpha, large enough that descent on L(., lambda_check) stays feasible."""
    if not alpha > 0:
        raise ScsaInputError(f"alpha must be positive, got: {alpha}")
    return delta_f / alpha


def dual_step(lambda_t: float, g_hat_t: float, mu_f: float, L_g: float) -> float:
    """max(lambda_t + mu_f / (8 L_g^2) * g_hat_t, 0)."""
    if g_hat_t > 0:
        raise SafetyViolationError(f"constraint estimate is positive at a certified iterate: {g_hat_t}")
    return max(lambda_t + mu_f / (8.0 * L_g ** 2) * g_hat_t, 0.0)


def safety_radius(g_hat_t: float, L_g: float) -> float:
    """-g_hat / (2 L_g): every point of the ball keeps g <= g_hat / 2."""
    if not g_hat_t < 0:
        raise SafetyViolationError(f"no safety ball around a point with g_hat = {g_hat_t}")
    return -g_hat_t / (2.0 * L_g)


def eta_schedule(g_hat_t: float, lambda_next: float, cfg: ScsaConfig,
                 constants: LagrangianConstants, terminal: Optional[bool] = None) -> float:
    """Primal accuracy for the next solve; the terminal branch applies once -g_hat * lambda_next <= eps_c."""
    if terminal is None:
        terminal = -g_hat_t * lambda_next <= cfg.eps_c
    if not terminal:
        return constants.mu_f * g_hat_t ** 2 / (128.0 * constants.L_g ** 2)
    M_L = constants.M_L(lambda_next)
    return min(constants.mu_f * cfg.eps_p ** 2 / M_L ** 2, cfg.eps_c)


def eps_schedule(g_hat_prev: float, cfg: ScsaConfig) -> float:
    """Constraint-estimate accuracy max(-g_hat_prev / 8, eps_floor)."""
    return max(-g_hat_prev / 8.0, cfg.eps_floor or 0.0)


def horizon_terms(spec: ProblemSpec, lambda_check: float, cfg: ScsaConfig,
                  g_check: Optional[float] = None) -> Tuple[float, float, float]:
    """(first-phase count, linear-phase coefficient, log term) of the outer-iteration bound."""
    if not spec.is_strongly_convex:
        raise ScsaInputError("horizon bound needs a strongly convex spec")
    L2 = spec.L_g ** 2
    first_phase = 8.0 * L2 * lambda_check / (spec.beta * spec.mu_f)
    mu_d = spec.beta ** 2 / (4.0 * spec.R ** 2 * (spec.M_f + lambda_check * spec.M_g))
    coefficient = 16.0 * L2 / (mu_d * spec.mu_f)
    g_bar = 2.0 * abs(g_check) if g_check is not None else 2.0 * spec.beta
    scale = max(4.0 * L2 * lambda_check ** 2 / spec.mu_f, g_bar * lambda_check)
    log_term = max(math.log(scale / cfg.eps_c), 0.0) if scale > 0 else 0.0
    return first_phase, coefficient, log_term


def horizon_bound(spec: ProblemSpec, lambda_check: float, cfg: ScsaConfig,
                  g_check: Optional[float] = None) -> int:
    """Two-phase outer-iteration bound with the dual curvature replaced by its lower bound."""
    first_phase, coefficient, log_term = horizon_terms(spec, lambda_check, cfg, g_check)
    return max(1, math.ceil(first_phase + coefficient * log_term))


def kkt_residual(spec: ProblemSpec, x, lam: float) -> KKTResidual:
    """Analytic (grad norm, complementarity gap, sign flags) at (x, lam)."""
    f, g = eval_true(spec, x)
    grad = f.gradient + lam * g.gradient
    return KKTResidual(
        grad_norm=float(np.linalg.norm(grad)),
        comp_slack=float(-g.value * lam),
        lambda_nonneg=lam >= 0,
        feasible=g.value <= 0,
    )


def scsa_solve(spec: ProblemSpec, oracle: FirstOrderOracle, cfg: ScsaConfig,
               rng: np.random.Generator, init: Optional[Tuple[np.ndarray, float]] = None,
               trace: Optional[RunTrace] = None, round_index: int = 1) -> SolveResult:
    """Run the safe primal-dual loop on a strongly convex spec.

    With ``init = (x_check, lambda_check)`` the preliminary descent phase is
    skipped. Records are appended to ``trace`` when one is given.
    """
    if not spec.is_strongly_convex:
        raise ScsaInputError(f"SCSA needs a strongly convex spec, got {spec.convexity_class.value}")
    if trace is None:
        trace = RunTrace(run_id=oracle.ledger.run_id)
    constants = LagrangianConstants.from_spec(spec)
    start_calls = oracle.calls

    def remaining() -> int:
        return cfg.max_oracle_calls - (oracle.calls - start_calls)

    if init is None:
        lam = initial_dual(spec.delta_f, spec.alpha)
    else:
        lam = float(init[1])
    cfg = cfg.resolved(lam)
    T_max = horizon_bound(spec, lam, cfg)
    cap = T_max if cfg.max_outer is None else min(T_max, cfg.max_outer)
    trace.diagnostics.setdefault("horizon_bound", T_max)
    trace.diagnostics.setdefault("horizon_bound_prior", T_max)
    trace.diagnostics.setdefault("lambda_check", lam)

    outcome = None
    if init is None:
        eta_check = spec.mu_f * spec.alpha ** 2 / (8.0 * spec.L_g ** 2)
        oracle.set_ball(-1)
        report = descent_msgd(oracle, lam, spec.x_start, eta_check, constants, rng,
                              max_calls=remaining(), max_steps=cfg.max_inner_steps,
                              T_max=T_max, delta=cfg.delta)
        x = report.x_out
        trace.diagnostics["preliminary_calls"] = report.oracle_calls
        logger.info(f"preliminary descent: {report.iterations} steps, {report.oracle_calls} calls")
        if not report.certified:
            outcome = Outcome.BUDGET_EXCEEDED
    else:
        x = np.array(init[0], dtype=float)

    g_prev = -spec.alpha
    t = 0
    while outcome is None:
        t += 1
        if t > cap:
            outcome = Outcome.HORIZON_REACHED
            break
        if remaining() < 1:
            outcome = Outcome.BUDGET_EXCEEDED
            break

        iteration_start = oracle.calls
        ball_id = len(trace.records)
        oracle.set_ball(ball_id)
        eps_t = eps_schedule(g_prev, cfg)
        if remaining() < ucb_batch_size(oracle.noise.sigma, eps_t, T_max, cfg.delta):
            outcome = Outcome.BUDGET_EXCEEDED
            break
        estimate = estimate_constraint_ucb(oracle, x, eps_t, T_max, cfg.delta, rng)
        g_hat = estimate.g_hat
        if t == 1 and g_hat < 0:
            # |g(x_check)| <= |g_hat| + eps_t on the confidence event
            refined = min(T_max, horizon_bound(spec, lam, cfg, g_check=g_hat - eps_t))
            if refined < T_max:
                logger.info(f"horizon refined from {T_max} to {refined} outer iterations")
            T_max = refined
            cap = T_max if cfg.max_outer is None else min(T_max, cfg.max_outer)
            if round_index == 1:
                trace.diagnostics["horizon_bound"] = T_max
        try:
            radius = safety_radius(g_hat, spec.L_g)
            lam_next = dual_step(lam, g_hat, spec.mu_f, spec.L_g)
        except SafetyViolationError as e:
            logger.error(f"SCSA aborted at t={t}: {e}")
            trace.records.append(DualState(t, x.copy(), lam, g_hat, 0.0, eps_t, 0.0, oracle.calls,
                                           lam, estimate.n_used, oracle.calls - iteration_start,
                                           round_index, ball_id))
            outcome = Outcome.SAFETY_ABORT
            break

        stop = -g_hat * lam_next <= cfg.eps_c
        eta = eta_schedule(g_hat, lam_next, cfg, constants, terminal=stop)
        state = DualState(t, x.copy(), lam, g_hat, eta, eps_t, radius, 0, lam_next,
                          estimate.n_used, 0, round_index, ball_id)
        trace.records.append(state)

        report = psgd_solve(oracle, lam_next, Ball(x, radius), x, eta, constants, rng,
                            max_calls=max(remaining(), 0), max_steps=cfg.max_inner_steps)
        x = report.x_out
        lam = lam_next
        state.calls = oracle.calls - iteration_start
        state.cumulative_calls = oracle.calls
        logger.debug(f"t={t} lambda={lam:.6g} g_hat={g_hat:.6g} radius={radius:.3g} "
                     f"inner={report.iterations}")

        if remaining() < 1 and not report.certified:
            outcome = Outcome.BUDGET_EXCEEDED
        elif stop:
            outcome = Outcome.LAMBDA_ZERO if lam == 0 else Outcome.CONVERGED
        g_prev = g_hat

    oracle.set_ball(-1)
    trace.outcome = outcome.value
    trace.x_final = x
    trace.lambda_final = lam
    trace.total_calls = oracle.calls
    trace.diagnostics["outer_iterations"] = t if outcome is not Outcome.HORIZON_REACHED else t - 1
    logger.info(f"SCSA finished: {outcome.value} after {t} outer iterations, {oracle.calls} calls")
    return SolveResult(x, lam, trace)
