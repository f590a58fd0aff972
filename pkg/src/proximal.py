"""
SafePD Proximal Outer Loop Module

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

Weakly convex problems are solved through a sequence of proximally
regularized subproblems, each strongly convex and handed to SCSA with a
warm-started dual. Merely convex problems get a single static
regularization around the start point.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from inner import LagrangianConstants, descent_msgd
from oracle import BatchSample, FirstOrderOracle, estimate_constraint_ucb, ucb_batch_size
from problem import ConvexityClass, ProblemSpec
from scsa import (Outcome, SafetyViolationError, ScsaConfig, scsa_solve)
from trace_manager import RunTrace

logger = logging.getLogger("safepd.proximal")

DEFAULT_MAX_ROUNDS = 1000


class SubproblemError(ValueError):
    """Exception raised for invalid proximal subproblem parameters."""
    pass


@dataclass(frozen=True)
class ProxSubproblem:
    """f + rho_f/2 ||x - c||^2 subject to g + rho_g/2 ||x - c||^2 <= 0, as a ProblemSpec view."""

    base: ProblemSpec
    center: np.ndarray
    rho_f: float
    rho_g: float
    spec: ProblemSpec


@dataclass
class OuterState:
    k: int
    x_k: np.ndarray
    lambda_k: float
    lambda_check_k: float
    eta_k: float
    eta_check_k: float
    g_hat_k: float
    step_norm: float
    cumulative_calls: int = 0
    inner_outcome: str = ""


class SafePDResult(NamedTuple):
    x: np.ndarray
    lam: float
    trace: RunTrace


def _proximal_map(base_map, center: np.ndarray, rho: float):
    def regularized(x):
        value, grad = base_map(x)
        diff = x - center
        return float(value) + 0.5 * rho * float(diff @ diff), np.asarray(grad, dtype=float) + rho * diff

    return regularized


def build_subproblem(spec: ProblemSpec, center, rho_f: float, rho_g: float,
                     depth: Optional[float] = None) -> ProxSubproblem:
    """Regularize objective and constraint around ``center``.

    ``depth`` is the constraint depth -g(center) the subproblem starts from
    (defaults to the exact value); it sets alpha = beta of the view and the
    local radius sqrt(8 depth / mu_g) used for the constraint Lipschitz bound.
    """
    if not rho_f > spec.M_f:
        raise SubproblemError(f"rho_f ({rho_f}) must exceed M_f ({spec.M_f})")
    if not rho_g > spec.M_g:
        raise SubproblemError(f"rho_g ({rho_g}) must exceed M_g ({spec.M_g})")
    center = np.array(center, dtype=float)
    if depth is None:
        depth = -float(spec.constraint(center)[0])
    if not depth > 0:
        raise SafetyViolationError(f"proximal center is not strictly feasible: depth {depth}")

    mu_f = rho_f - spec.M_f
    mu_g = rho_g - spec.M_g
    radius = math.sqrt(8.0 * depth / mu_g)
    L_g = spec.L_g + rho_g * radius
    view = ProblemSpec(
        name=f"{spec.name}-prox",
        dim=spec.dim,
        objective=_proximal_map(spec.objective, center, rho_f),
        constraint=_proximal_map(spec.constraint, center, rho_g),
        mu_f=mu_f,
        M_f=rho_f + spec.M_f,
        M_g=rho_g + spec.M_g,
        L_g=L_g,
        x_start=center,
        alpha=depth,
        beta=depth,
        delta_f=spec.delta_f,
        R=radius,
        G_f=spec.G_f + rho_f * radius,
        G_g=L_g,
        convexity_class=ConvexityClass.STRONGLY_CONVEX,
        mu_g=mu_g,
        check_start=False,
    )
    return ProxSubproblem(spec, center, rho_f, rho_g, view)


class ProximalOracle(FirstOrderOracle):
    """Adds the known proximal terms to a base oracle; queries land in the base ledger."""

    def __init__(self, base: FirstOrderOracle, center, rho_f: float, rho_g: float):
        super().__init__(base.dim, base.noise, base.ledger)
        self.base = base
        self.center = np.array(center, dtype=float)
        self.rho_f = rho_f
        self.rho_g = rho_g

    @property
    def stencil_radius(self) -> float:
        return getattr(self.base, "stencil_radius", 0.0)

    @property
    def cost_per_sample(self) -> int:
        return self.base.cost_per_sample

    def _terms(self, x) -> Tuple[np.ndarray, float]:
        diff = np.asarray(x, dtype=float) - self.center
        return diff, 0.5 * float(diff @ diff)

    def query_batch(self, x, n: int, rng: np.random.Generator) -> BatchSample:
        x = self._check_point(x)
        batch = self.base.query_batch(x, n, rng)
        diff, half_sq = self._terms(x)
        return BatchSample(
            batch.f_value + self.rho_f * half_sq,
            batch.f_grad + self.rho_f * diff,
            batch.g_value + self.rho_g * half_sq,
            batch.g_grad + self.rho_g * diff,
            batch.n,
            batch.query_index,
        )

    def sample_values(self, x, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        x = self._check_point(x)
        f_value, g_value = self.base.sample_values(x, n, rng)
        _, half_sq = self._terms(x)
        return f_value + self.rho_f * half_sq, g_value + self.rho_g * half_sq


def warm_start_dual(lambda_k: float, rho_f: float, rho_g: float, eta_k: float,
                    eta_check_next: float, g_hat_k: float) -> float:
    """2 lambda_k + rho_f / rho_g + (eta_k + eta_check_next) / (-g_hat_k)."""
    if g_hat_k >= 0:
        raise SafetyViolationError(f"warm start needs a strictly feasible iterate, g_hat = {g_hat_k}")
    return 2.0 * lambda_k + rho_f / rho_g + (eta_k + eta_check_next) / (-g_hat_k)


def stopping_threshold(eps_p: float, eps_c: float, lambda_check_k: float,
                       rho_f: float, rho_g: float) -> float:
    return min(eps_p / (rho_f + lambda_check_k * rho_g),
               math.sqrt(2.0 * eps_c / (lambda_check_k * rho_g)))


def stopping_check(step_norm: float, eps_p: float, eps_c: float, lambda_check_k: float,
                   rho_f: float, rho_g: float) -> bool:
    """True once the proximal step is short enough to certify an approximate KKT pair."""
    return step_norm <= stopping_threshold(eps_p, eps_c, lambda_check_k, rho_f, rho_g)


def safepd_solve(spec: ProblemSpec, oracle: FirstOrderOracle, cfg: ScsaConfig,
                 rng: np.random.Generator, rho_f: Optional[float] = None,
                 rho_g: Optional[float] = None, max_rounds: int = DEFAULT_MAX_ROUNDS) -> SafePDResult:
    """Safe proximal primal-dual method for smooth weakly convex problems.

    Round k regularizes around x_{k-1}, runs descent on the subproblem
    Lagrangian at the warm-started dual, then SCSA from that pair. Stops when
    the proximal step certifies a (2 eps_p, 2 eps_c)-KKT pair of the original
    problem.
    """
    rho_f = 2.0 * spec.M_f if rho_f is None else rho_f
    rho_g = 2.0 * spec.M_g if rho_g is None else rho_g
    if not (rho_f > spec.M_f and rho_g > spec.M_g):
        raise SubproblemError(f"need rho_f > M_f and rho_g > M_g, got {rho_f}, {rho_g}")

    trace = RunTrace(run_id=oracle.ledger.run_id)
    trace.diagnostics.update({"rho_f": rho_f, "rho_g": rho_g, "max_rounds": max_rounds})
    start_calls = oracle.calls
    eps_floor = cfg.eps_floor if cfg.eps_floor is not None else cfg.eps_c / 8.0

    def remaining() -> int:
        return cfg.max_oracle_calls - (oracle.calls - start_calls)

    def constraint_ucb(x, depth_hint: float) -> Optional[float]:
        oracle.set_ball(-1)
        eps = max(depth_hint / 8.0, eps_floor)
        if remaining() < ucb_batch_size(oracle.noise.sigma, eps, max_rounds, cfg.delta):
            return None
        return estimate_constraint_ucb(oracle, x, eps, max_rounds, cfg.delta, rng).g_hat

    x_prev = np.array(spec.x_start, dtype=float)
    lam = 0.0
    g_hat = constraint_ucb(x_prev, spec.alpha)
    outcome = None
    if g_hat is None:
        outcome = Outcome.BUDGET_EXCEEDED
        lam_check = 0.0
    elif g_hat >= 0:
        logger.error(f"start point not certified feasible: g_hat = {g_hat}")
        outcome = Outcome.SAFETY_ABORT
        lam_check = 0.0
    else:
        lam_check = spec.delta_f / (-g_hat)

    k = 0
    while outcome is None:
        k += 1
        if k > max_rounds:
            outcome = Outcome.OUTER_CAP_REACHED
            break
        if remaining() < 1:
            outcome = Outcome.BUDGET_EXCEEDED
            break

        beta_k = -g_hat
        sub = build_subproblem(spec, x_prev, rho_f, rho_g, depth=beta_k)
        sub_spec = sub.spec
        sub_oracle = ProximalOracle(oracle, x_prev, rho_f, rho_g)
        constants = LagrangianConstants.from_spec(sub_spec)

        eta_check = sub_spec.mu_f * beta_k ** 2 / (8.0 * sub_spec.L_g ** 2)
        oracle.set_ball(-1)
        report = descent_msgd(sub_oracle, lam_check, x_prev, eta_check, constants, rng,
                              max_calls=max(remaining(), 0), max_steps=cfg.max_inner_steps,
                              T_max=max_rounds, delta=cfg.delta)
        if not report.certified:
            outcome = Outcome.BUDGET_EXCEEDED
            break

        if remaining() < 1:
            outcome = Outcome.BUDGET_EXCEEDED
            break
        records_before = len(trace.records)
        sub_cfg = dataclasses.replace(cfg, max_oracle_calls=remaining())
        x_k, lam_k, _ = scsa_solve(sub_spec, sub_oracle, sub_cfg, rng,
                                   init=(report.x_out, lam_check), trace=trace, round_index=k)
        inner_outcome = Outcome(trace.outcome)
        round_records = trace.records[records_before:]
        eta_k = round_records[-1].eta_t if round_records else 0.0
        step_norm = float(np.linalg.norm(x_k - x_prev))

        g_hat_k = constraint_ucb(x_k, beta_k)
        if g_hat_k is None:
            x_prev, lam = x_k, lam_k
            outcome = Outcome.BUDGET_EXCEEDED
            break
        state = OuterState(k, x_k.copy(), lam_k, lam_check, eta_k, eta_check, g_hat_k,
                           step_norm, oracle.calls, inner_outcome.value)
        trace.rounds.append(state)
        x_prev_round, x_prev, lam = x_prev, x_k, lam_k
        logger.debug(f"round {k}: step={step_norm:.3g} lambda={lam_k:.4g} "
                     f"lambda_check={lam_check:.4g} g_hat={g_hat_k:.4g}")

        if not inner_outcome.converged:
            outcome = inner_outcome
            break
        if stopping_check(step_norm, cfg.eps_p, cfg.eps_c, lam_check, rho_f, rho_g):
            outcome = Outcome.CONVERGED
            break
        if g_hat_k >= 0:
            logger.error(f"round {k}: iterate not certified feasible, g_hat = {g_hat_k}")
            outcome = Outcome.SAFETY_ABORT
            x_prev = x_prev_round
            break

        eta_check_next = sub_spec.mu_f * g_hat_k ** 2 / (8.0 * sub_spec.L_g ** 2)
        lam_check = warm_start_dual(lam_k, rho_f, rho_g, eta_k, eta_check_next, g_hat_k)
        g_hat = g_hat_k

    oracle.set_ball(-1)
    trace.outcome = outcome.value
    trace.x_final = x_prev
    trace.lambda_final = lam
    trace.total_calls = oracle.calls
    trace.diagnostics["outer_rounds"] = len(trace.rounds)
    logger.info(f"SafePD finished: {outcome.value} after {len(trace.rounds)} rounds, {oracle.calls} calls")
    return SafePDResult(x_prev, lam, trace)


def build_regularized(spec: ProblemSpec, eps: float) -> ProblemSpec:
    """f + eps / (2 R^2) ||x - x_start||^2 with the original constraint."""
    if not eps > 0:
        raise SubproblemError(f"eps must be positive, got: {eps}")
    mu = eps / spec.R ** 2
    return dataclasses.replace(
        spec,
        name=f"{spec.name}-regularized",
        objective=_proximal_map(spec.objective, np.array(spec.x_start), mu),
        mu_f=mu,
        M_f=spec.M_f + mu,
        G_f=spec.G_f + mu * spec.R,
        convexity_class=ConvexityClass.STRONGLY_CONVEX,
        f_star=None,
        x_star=None,
        lambda_star=None,
        check_start=False,
    )


def convex_solve(spec: ProblemSpec, oracle: FirstOrderOracle, cfg: ScsaConfig, eps: float,
                 rng: np.random.Generator) -> Tuple[np.ndarray, RunTrace]:
    """Solve a convex problem to objective gap eps through one static regularization."""
    if spec.convexity_class is ConvexityClass.NON_CONVEX:
        raise SubproblemError("convex_solve needs a convex spec")
    regularized = build_regularized(spec, eps)
    reg_oracle = ProximalOracle(oracle, spec.x_start, regularized.mu_f, 0.0)
    reg_cfg = dataclasses.replace(cfg, eps_c=eps / 2.0, eps_floor=None)
    x, lam, trace = scsa_solve(regularized, reg_oracle, reg_cfg, rng)
    trace.diagnostics["regularization_mu"] = regularized.mu_f
    return x, trace
