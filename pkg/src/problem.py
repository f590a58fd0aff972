"""
SafePD Problem Module

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

This module defines problem specifications with analytic ground truth and
the built-in benchmarks. Solvers only ever see an oracle handle; the analytic
maps stored here are for the auditor and the verification oracles.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np

AnalyticMap = Callable[[np.ndarray], Tuple[float, np.ndarray]]

QUADRATIC = "quadratic"
NONCONVEX_GAUSSIAN = "nonconvex-gaussian"
TWO_HALFSPACE = "two-halfspace"


class ProblemSpecError(ValueError):
    """Exception raised for invalid problem specifications or inputs."""
    pass


class ConvexityClass(Enum):
    """Convexity class of the objective."""

    STRONGLY_CONVEX = "StronglyConvex"
    CONVEX = "Convex"
    NON_CONVEX = "NonConvex"


@dataclass(frozen=True)
class EvalPair:
    """A value together with its gradient."""

    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    """Objective/constraint pair plus every regularity constant the solvers use."""

    name: str
    dim: int
    objective: AnalyticMap = field(repr=False)
    constraint: AnalyticMap = field(repr=False)
    mu_f: float
    M_f: float
    M_g: float
    L_g: float
    x_start: np.ndarray
    alpha: float
    beta: float
    delta_f: float
    R: float
    G_f: float
    G_g: float
    convexity_class: ConvexityClass
    mu_g: float = 0.0
    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    lambda_star: Optional[float] = None
    mfcq_l: Optional[float] = None
    theta: Optional[float] = None
    check_start: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ProblemSpecError(f"dim must be a positive integer, got: {self.dim}")
        x_start = np.array(self.x_start, dtype=float)
        if x_start.shape != (self.dim,):
            raise ProblemSpecError(f"x_start must have length {self.dim}, got shape {x_start.shape}")
        x_start.setflags(write=False)
        object.__setattr__(self, "x_start", x_start)
        if self.x_star is not None:
            x_star = np.array(self.x_star, dtype=float)
            x_star.setflags(write=False)
            object.__setattr__(self, "x_star", x_star)

        for key in ("M_f", "M_g", "L_g", "alpha", "beta", "R", "G_f", "G_g"):
            if not getattr(self, key) > 0:
                raise ProblemSpecError(f"{key} must be positive, got: {getattr(self, key)}")
        if self.mu_f < 0 or self.mu_g < 0 or self.delta_f < 0:
            raise ProblemSpecError("mu_f, mu_g and delta_f must be non-negative")
        if self.beta < self.alpha:
            raise ProblemSpecError(f"beta ({self.beta}) must be at least alpha ({self.alpha})")
        if self.convexity_class is ConvexityClass.STRONGLY_CONVEX:
            if not self.mu_f > 0 or self.M_f < self.mu_f:
                raise ProblemSpecError("strongly convex spec needs 0 < mu_f <= M_f")

        if not self.check_start:
            return
        g_start = self.constraint(x_start)[0]
        if -g_start < self.alpha * (1.0 - 1e-12):
            raise ProblemSpecError(
                f"x_start is not alpha-feasible: -g(x_start) = {-g_start}, alpha = {self.alpha}")

    @property
    def is_strongly_convex(self) -> bool:
        return self.convexity_class is ConvexityClass.STRONGLY_CONVEX


def _as_point(spec: ProblemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ProblemSpecError(f"expected a point of length {spec.dim}, got shape {x.shape}")
    return x


def eval_true(spec: ProblemSpec, x) -> Tuple[EvalPair, EvalPair]:
    """Exact objective and constraint values and gradients at x."""
    x = _as_point(spec, x)
    f_value, f_grad = spec.objective(x)
    g_value, g_grad = spec.constraint(x)
    return EvalPair(float(f_value), np.asarray(f_grad, dtype=float)), \
        EvalPair(float(g_value), np.asarray(g_grad, dtype=float))


def lagrangian(spec: ProblemSpec, x, lam: float) -> EvalPair:
    """Analytic Lagrangian f + lam * g and its gradient."""
    f, g = eval_true(spec, x)
    return EvalPair(f.value + lam * g.value, f.gradient + lam * g.gradient)


def make_quadratic_benchmark(d: int, target=None) -> ProblemSpec:
    """min ||x - x_tgt||^2 s.t. ||Ax - b||^2 - 4 <= 0, A = diag(1,..,1,2), b = e_d.

    The default target (0,..,0,5) is infeasible, so the run starts from the
    constraint minimizer (0,..,0,0.5).
    """
    if not isinstance(d, int) or d < 2:
        raise ProblemSpecError(f"quadratic benchmark needs d >= 2, got: {d}")

    scale = np.ones(d)
    scale[-1] = 2.0
    b = np.zeros(d)
    b[-1] = 1.0
    center = np.zeros(d)
    center[-1] = 0.5

    default_target = target is None
    x_tgt = np.zeros(d)
    if default_target:
        x_tgt[-1] = 5.0
    else:
        x_tgt = np.array(target, dtype=float)
        if x_tgt.shape != (d,):
            raise ProblemSpecError(f"target must have length {d}")

    def objective(x):
        diff = x - x_tgt
        return float(diff @ diff), 2.0 * diff

    def constraint(x):
        r = scale * x - b
        return float(r @ r) - 4.0, 2.0 * scale * r

    if default_target:
        delta_f = 18.0
        G_f = 11.0
        f_star = 12.25
        x_star = np.zeros(d)
        x_star[-1] = 1.5
        lambda_star = 0.875
    else:
        # The ellipse lies in the radius-2 ball around its center.
        reach = 2.0 + float(np.linalg.norm(center - x_tgt))
        delta_f = reach ** 2
        G_f = 2.0 * reach
        if constraint(x_tgt)[0] < 0:
            f_star, x_star, lambda_star = 0.0, x_tgt.copy(), 0.0
        else:
            f_star, x_star, lambda_star = None, None, None

    R = float(np.linalg.norm(center - x_star)) if x_star is not None else 4.0
    return ProblemSpec(
        name=QUADRATIC,
        dim=d,
        objective=objective,
        constraint=constraint,
        mu_f=2.0,
        M_f=2.0,
        M_g=8.0,
        L_g=8.0,
        x_start=center,
        alpha=4.0,
        beta=4.0,
        delta_f=delta_f,
        R=max(R, 1e-3),
        G_f=G_f,
        G_g=8.0,
        convexity_class=ConvexityClass.STRONGLY_CONVEX,
        mu_g=2.0,
        f_star=f_star,
        x_star=x_star,
        lambda_star=lambda_star,
        mfcq_l=4.0,
    )


def _gaussian_hessian_norm(samples: int = 20001, s_max: float = 4.0) -> float:
    """Spectral norm sup of (-8I + 64xx^T)exp(-4||x||^2) by dense radial sampling."""
    s = np.linspace(0.0, s_max, samples)
    decay = np.exp(-4.0 * s ** 2)
    radial = np.abs(-8.0 + 64.0 * s ** 2) * decay
    tangential = 8.0 * decay
    return float(max(radial.max(), tangential.max()))


def make_nonconvex_benchmark(d: int, r: float) -> ProblemSpec:
    """Inverted Gaussian exp(-4||x||^2) over a quadratic constraint around x0 = (1,..,1)/sqrt(d)."""
    if not isinstance(d, int) or d < 2:
        raise ProblemSpecError(f"non-convex benchmark needs d >= 2, got: {d}")
    if not (isinstance(r, (int, float)) and r > 0 and math.isfinite(r)):
        raise ProblemSpecError(f"radius r must be positive, got: {r}")

    x0 = np.ones(d) / math.sqrt(d)
    weights = np.full(d, 0.2)
    weights[1] += 10.0

    def objective(x):
        value = math.exp(-4.0 * float(x @ x))
        return value, -8.0 * x * value

    def constraint(x):
        y = x - x0
        return float(weights @ (y * y)) - r ** 2, 2.0 * weights * y

    # max ||grad g||^2 / weighted norm ratio over the ellipse: (2w_i)^2 / w_i
    L_g = r * math.sqrt(float(np.max(4.0 * weights)))
    return ProblemSpec(
        name=NONCONVEX_GAUSSIAN,
        dim=d,
        objective=objective,
        constraint=constraint,
        mu_f=0.0,
        M_f=_gaussian_hessian_norm(),
        M_g=float(2.0 * weights.max()),
        L_g=L_g,
        x_start=x0,
        alpha=r ** 2,
        beta=r ** 2,
        delta_f=1.0,
        R=2.0 * r / math.sqrt(0.2),
        G_f=math.sqrt(8.0) * math.exp(-0.5),
        G_g=L_g,
        convexity_class=ConvexityClass.NON_CONVEX,
        mfcq_l=None,
    )


def make_two_halfspace_benchmark(nu: float) -> ProblemSpec:
    """f = ||x - (3, 0.5)||^2 subject to x_0 - 1 <= 0 and -x_0 - 1 <= 0.

    The constraints are reduced by their pointwise max; ``constraint`` is that
    max (ground truth), while the solver-side oracle samples its smoothing with
    radius ``nu``. delta_f bounds f(x_start) - inf f.
    """
    if not nu > 0:
        raise ProblemSpecError(f"smoothing radius must be positive, got: {nu}")
    x_tgt = np.array([3.0, 0.5])

    def objective(x):
        diff = x - x_tgt
        return float(diff @ diff), 2.0 * diff

    def constraint(x):
        if x[0] >= -x[0]:
            return float(x[0] - 1.0), np.array([1.0, 0.0])
        return float(-x[0] - 1.0), np.array([-1.0, 0.0])

    depth = 1.0 - nu
    return ProblemSpec(
        name=TWO_HALFSPACE,
        dim=2,
        objective=objective,
        constraint=constraint,
        mu_f=2.0,
        M_f=2.0,
        M_g=math.sqrt(2.0) / nu,
        L_g=1.0,
        x_start=np.zeros(2),
        alpha=depth,
        beta=depth,
        delta_f=float(x_tgt @ x_tgt),
        R=float(np.linalg.norm([1.0, 0.5])),
        G_f=2.0 * (1.0 + float(np.linalg.norm(x_tgt)) + 1.0),
        G_g=1.0,
        convexity_class=ConvexityClass.STRONGLY_CONVEX,
        f_star=4.0,
        x_star=np.array([1.0, 0.5]),
        lambda_star=4.0,
    )


def two_halfspace_constraints():
    """The two original constraints as value maps over (..., 2) arrays."""
    return [
        lambda x: np.asarray(x)[..., 0] - 1.0,
        lambda x: -np.asarray(x)[..., 0] - 1.0,
    ]


BENCHMARKS: Dict[str, Callable[..., ProblemSpec]] = {
    QUADRATIC: make_quadratic_benchmark,
    NONCONVEX_GAUSSIAN: make_nonconvex_benchmark,
    TWO_HALFSPACE: make_two_halfspace_benchmark,
}


def make_benchmark(name: str, dim: int = 2, **params) -> ProblemSpec:
    """Build a benchmark by its canonical CLI name."""
    if name == QUADRATIC:
        return make_quadratic_benchmark(dim, target=params.get("target"))
    if name == NONCONVEX_GAUSSIAN:
        return make_nonconvex_benchmark(dim, params.get("r", 0.5))
    if name == TWO_HALFSPACE:
        return make_two_halfspace_benchmark(params.get("nu", 0.1))
    raise ProblemSpecError(f"Unknown benchmark: {name}")
