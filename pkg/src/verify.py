"""
SafePD Verification Module

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

High-accuracy deterministic checks built on the analytic maps of a spec:
dual function evaluation, multiplier bisection, dual regularity reports and
the safety audit of a finished run.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from oracle import QueryLedger
from problem import ProblemSpec, eval_true, lagrangian
from trace_manager import RunTrace, record_field

logger = logging.getLogger("safepd.verify")

MAX_ITERATIONS = 10000


class VerifyError(ValueError):
    """Exception raised when a verification input is invalid."""
    pass


@dataclass
class AuditReport:
    total_queries: int = 0
    violations: int = 0
    worst_g: Optional[float] = None
    lambda_monotone: bool = True
    safety_ball_breaches: int = 0
    total_samples: int = 0

    @property
    def clean(self) -> bool:
        return self.violations == 0 and self.lambda_monotone and self.safety_ball_breaches == 0

    def to_dict(self):
        return asdict(self)


@dataclass
class RegularityReport:
    """Dual smoothness, local curvature and growth checks over a multiplier grid."""

    grid: List[float]
    slopes: List[float]
    curvatures: List[float]
    curvature_bounds: List[float]
    growth_ok: List[bool]
    smoothness_envelope: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self):
        data = asdict(self)
        data["passed"] = self.passed
        return data


def _certified_minimizer(value_and_grad, x0, threshold: float, what: str) -> np.ndarray:
    """Minimize with BFGS, polish the stationarity equations, and certify ||grad|| <= threshold."""
    def gradient(x):
        return value_and_grad(x)[1]

    res = optimize.minimize(value_and_grad, np.asarray(x0, dtype=float), jac=True, method="BFGS",
                            options={"gtol": threshold, "norm": 2, "maxiter": MAX_ITERATIONS})
    x = np.asarray(res.x, dtype=float)
    grad_norm = float(np.linalg.norm(gradient(x)))
    if not np.isfinite(grad_norm):
        raise VerifyError(f"{what}: minimization diverged ({res.message})")
    if grad_norm > threshold:
        polished = optimize.root(gradient, x, method="hybr", options={"xtol": 1e-15})
        x_polished = np.asarray(polished.x, dtype=float)
        polished_norm = float(np.linalg.norm(gradient(x_polished)))
        if polished_norm < grad_norm:
            x, grad_norm = x_polished, polished_norm
    if not grad_norm <= threshold:
        raise VerifyError(f"{what}: gradient norm {grad_norm:.3g} above certificate {threshold:.3g} "
                          f"(success={res.success}: {res.message})")
    return x


def dual_value(spec: ProblemSpec, lam: float, tol: float = 1e-18,
               x0=None) -> Tuple[float, np.ndarray]:
    """d(lam) = min_x f + lam g, certified with ||grad|| <= sqrt(2 mu_L tol)."""
    if lam < 0:
        raise VerifyError(f"lambda must be non-negative, got: {lam}")
    mu = spec.mu_f + lam * spec.mu_g
    if not mu > 0:
        raise VerifyError(f"Lagrangian is not coercive at lambda={lam}: no strong convexity")

    def value_and_grad(x):
        pair = lagrangian(spec, x, lam)
        return pair.value, pair.gradient

    x = _certified_minimizer(value_and_grad, spec.x_start if x0 is None else x0,
                             math.sqrt(2.0 * mu * tol), f"dual_value at lambda={lam}")
    return lagrangian(spec, x, lam).value, x


def dual_gradient(spec: ProblemSpec, lam: float, tol: float = 1e-24) -> float:
    """grad d(lam) = g(x_lam)."""
    _, x_lam = dual_value(spec, lam, tol)
    return eval_true(spec, x_lam)[1].value


def dual_opt_bisection(spec: ProblemSpec, lambda_hi: float, tol: float = 1e-8) -> float:
    """lambda* by bisection on the sign of g(x_lam) over [0, lambda_hi]."""
    if not tol > 0:
        raise VerifyError(f"tol must be positive, got: {tol}")
    if dual_gradient(spec, 0.0) <= 0:
        return 0.0
    if dual_gradient(spec, lambda_hi) > 0:
        raise VerifyError(
            f"lambda_hi={lambda_hi} does not bracket lambda*: g(x_lambda_hi) > 0; "
            f"use the dual bound delta_f / beta = {spec.delta_f / spec.beta}")
    lo, hi = 0.0, float(lambda_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dual_gradient(spec, mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dual_curvature_bound(spec: ProblemSpec, lam: float) -> float:
    """Lower bound l^2 / (M_f + lam M_g) on the local dual curvature; l = beta / (2R) if unknown."""
    l = spec.mfcq_l if spec.mfcq_l is not None else spec.beta / (2.0 * spec.R)
    return l ** 2 / (spec.M_f + lam * spec.M_g)


def check_dual_regularity(spec: ProblemSpec, lambda_grid: Sequence[float],
                          lambda_star: Optional[float] = None,
                          fd_step: float = 1e-5) -> RegularityReport:
    """Check dual smoothness, local strong concavity and linear growth of -g(x_lam) on [lambda*, lambda_check]."""
    if not spec.is_strongly_convex:
        raise VerifyError("dual regularity is defined for strongly convex specs")
    grid = sorted(float(v) for v in lambda_grid)
    if len(grid) < 2:
        raise VerifyError("lambda grid needs at least two points")
    if lambda_star is None:
        lambda_star = spec.lambda_star
    if lambda_star is None:
        lambda_star = dual_opt_bisection(spec, spec.delta_f / spec.beta, tol=1e-10)
    lambda_check = spec.delta_f / spec.alpha
    slack = 1e-9 * (1.0 + lambda_check)
    if grid[0] < lambda_star - slack or grid[-1] > lambda_check + slack:
        raise VerifyError(f"grid leaves [{lambda_star}, {lambda_check}]")

    envelope = 2.0 * spec.L_g ** 2 / spec.mu_f
    g_values = []
    grad_norms = []
    for lam in grid:
        _, x_lam = dual_value(spec, lam)
        g = eval_true(spec, x_lam)[1]
        g_values.append(g.value)
        grad_norms.append(float(np.linalg.norm(g.gradient)))

    report = RegularityReport(grid, [], [], [], [], envelope)
    for i in range(len(grid) - 1):
        slope = (g_values[i + 1] - g_values[i]) / (grid[i + 1] - grid[i])
        report.slopes.append(slope)
        if slope > 1e-7 or slope < -envelope * (1.0 + 1e-6):
            report.failures.append(f"slope {slope:.6g} on [{grid[i]:.6g}, {grid[i + 1]:.6g}] outside [-{envelope:.6g}, 0]")

    for lam, g_value, grad_norm in zip(grid, g_values, grad_norms):
        curvature = (dual_gradient(spec, lam + fd_step) - dual_gradient(spec, max(lam - fd_step, 0.0))) \
            / (lam + fd_step - max(lam - fd_step, 0.0))
        bound = grad_norm ** 2 / (spec.M_f + lam * spec.M_g)
        report.curvatures.append(curvature)
        report.curvature_bounds.append(bound)
        if -curvature < bound * (1.0 - 1e-4) - 1e-7:
            report.failures.append(f"curvature {curvature:.6g} at lambda={lam:.6g} weaker than -{bound:.6g}")
        growth = -g_value >= 0.5 * dual_curvature_bound(spec, lam) * (lam - lambda_star) - 1e-9
        report.growth_ok.append(growth)
        if not growth:
            report.failures.append(f"-g(x_lambda) = {-g_value:.6g} below growth bound at lambda={lam:.6g}")

    for failure in report.failures:
        logger.warning(f"dual regularity: {failure}")
    return report


def max_regularized_depth(spec: ProblemSpec, center, rho_g: float, tol: float = 1e-20) -> float:
    """max_x -(g(x) + rho_g/2 ||x - center||^2), the depth of the regularized constraint."""
    if not rho_g > spec.M_g:
        raise VerifyError(f"rho_g ({rho_g}) must exceed M_g ({spec.M_g})")
    center = np.asarray(center, dtype=float)
    mu = rho_g - spec.M_g

    def value_and_grad(x):
        g_value, g_grad = spec.constraint(x)
        diff = x - center
        return float(g_value) + 0.5 * rho_g * float(diff @ diff), np.asarray(g_grad, dtype=float) + rho_g * diff

    x = _certified_minimizer(value_and_grad, center, math.sqrt(2.0 * mu * tol), "max_regularized_depth")
    return -value_and_grad(x)[0]


def audit_trace(trace: RunTrace, ledger: QueryLedger, spec: ProblemSpec) -> AuditReport:
    """Replay the ledger against the true constraint and the trace's safety balls."""
    if trace.run_id != ledger.run_id:
        raise VerifyError(f"trace run id {trace.run_id!r} does not match ledger {ledger.run_id!r}")

    report = AuditReport(total_queries=len(ledger), total_samples=ledger.total)
    stencil = float(trace.diagnostics.get("stencil_radius", 0.0))
    for record in ledger:
        g_value = eval_true(spec, record.x)[1].value
        report.worst_g = g_value if report.worst_g is None else max(report.worst_g, g_value)
        if g_value > 0:
            report.violations += 1
        if record.ball >= 0:
            if record.ball >= len(trace.records):
                report.safety_ball_breaches += 1
                continue
            ball = trace.records[record.ball]
            center = np.asarray(record_field(ball, "x_t"), dtype=float)
            radius = float(record_field(ball, "safety_radius_t"))
            dist = float(np.linalg.norm(record.x - center))
            if dist > radius + stencil + 1e-9 * (1.0 + radius):
                report.safety_ball_breaches += 1

    previous = {}
    for record in trace.records:
        rnd = record_field(record, "round", 1)
        lam = float(record_field(record, "lambda_t"))
        lam_next = record_field(record, "lambda_next")
        if rnd in previous and lam > previous[rnd] + 1e-12:
            report.lambda_monotone = False
        if lam_next is not None and float(lam_next) > lam + 1e-12:
            report.lambda_monotone = False
        previous[rnd] = lam

    if report.violations:
        logger.warning(f"audit: {report.violations} violating queries, worst g = {report.worst_g:.6g}")
    return report


def complexity_ratio(trace: RunTrace, spec: ProblemSpec, eps: float, sigma: float,
                     sigma_hat: float) -> float:
    """Realised calls over the shape (lambda/beta + M_f R^2 / (mu_f beta^2) ln 1/eps)(sigma^2 + (L + sigma_hat)^2 / mu_f) / eps^2.

    Informational only; constants are not part of the shape.
    """
    if not eps > 0:
        raise VerifyError("eps must be positive")
    mu = spec.mu_f if spec.mu_f > 0 else eps / spec.R ** 2
    lambda_check = spec.delta_f / spec.alpha
    outer = lambda_check / spec.beta + spec.M_f / mu * spec.R ** 2 / spec.beta ** 2 * max(math.log(1.0 / eps), 1.0)
    L = spec.G_f + lambda_check * spec.G_g
    inner = (sigma ** 2 + (L + sigma_hat) ** 2 / mu) / eps ** 2
    return trace.total_calls / (outer * inner)


def best_gap_curve(trace: RunTrace, spec: ProblemSpec, budgets: Sequence[int]) -> List[float]:
    """Best feasible objective gap seen within each call budget; NaN before the first feasible point."""
    reference = spec.f_star if spec.f_star is not None else 0.0
    points = []
    for record in trace.records:
        x = record_field(record, "x_t")
        if x is None:
            continue
        available = int(record_field(record, "cumulative_calls", 0)) - int(record_field(record, "calls", 0))
        points.append((available, np.asarray(x, dtype=float)))
    if trace.x_final is not None:
        points.append((int(trace.total_calls), np.asarray(trace.x_final, dtype=float)))

    gaps = []
    for calls, x in sorted(points, key=lambda p: p[0]):
        f, g = eval_true(spec, x)
        gaps.append((calls, f.value - reference if g.value <= 0 else math.inf))

    curve = []
    best = math.inf
    index = 0
    for budget in budgets:
        while index < len(gaps) and gaps[index][0] <= budget:
            best = min(best, gaps[index][1])
            index += 1
        curve.append(best if math.isfinite(best) else math.nan)
    return curve


def log_spaced_budgets(max_calls: int, points: int = 32, start: int = 100) -> List[int]:
    """``points`` logarithmically spaced call budgets from ``start`` to ``max_calls``."""
    if max_calls <= start:
        return [int(max_calls)] * points
    return [int(round(b)) for b in np.logspace(math.log10(start), math.log10(max_calls), points)]
