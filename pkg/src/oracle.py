"""
SafePD Oracle Module

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

This module simulates the noisy black-box feedback the solvers work with:
first-order and value-only oracles, the confidence-bound constraint
estimator, finite-difference and smoothing adapters, and the query ledger
the auditor replays.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from problem import ProblemSpec

ValueMap = Callable[[np.ndarray], np.ndarray]

logger = logging.getLogger("safepd.oracle")


class OracleError(ValueError):
    """Exception raised for invalid oracle arguments."""
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Sub-Gaussian noise parameters of the value (sigma) and gradient (sigma_hat) channels."""

    sigma: float = 0.0
    sigma_hat: float = 0.0
    distribution: str = "Gaussian"

    def __post_init__(self):
        for key in ("sigma", "sigma_hat"):
            value = getattr(self, key)
            if not (math.isfinite(value) and value >= 0):
                raise OracleError(f"{key} must be finite and non-negative, got: {value}")
        if self.distribution != "Gaussian":
            raise OracleError(f"Unsupported noise distribution: {self.distribution}")

    @property
    def noiseless(self) -> bool:
        return self.sigma == 0 and self.sigma_hat == 0


@dataclass(frozen=True)
class OracleSample:
    """One noisy measurement bundle."""

    f_value: float
    f_grad: np.ndarray
    g_value: float
    g_grad: np.ndarray
    query_index: int


@dataclass(frozen=True)
class BatchSample:
    """Means of ``n`` independent samples drawn at the same point."""

    f_value: float
    f_grad: np.ndarray
    g_value: float
    g_grad: np.ndarray
    n: int
    query_index: int


@dataclass(frozen=True)
class LedgerRecord:
    query_index: int
    x: np.ndarray
    samples_drawn: int
    ball: int = -1


class QueryLedger:
    """Append-only log of every point the oracle was asked about."""

    def __init__(self, run_id: str = ""):
        self.run_id = run_id
        self.records: List[LedgerRecord] = []
        self.total = 0
        # safety ball the current queries are restricted to, -1 if none
        self.ball = -1

    def append(self, x: np.ndarray, samples: int) -> int:
        """Record ``samples`` draws at x and return the index of the first one."""
        index = self.total
        self.records.append(LedgerRecord(index, np.array(x, dtype=float), int(samples), self.ball))
        self.total += int(samples)
        return index

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[LedgerRecord]:
        return iter(self.records)


class FirstOrderOracle(ABC):
    """Contract shared by every oracle a solver may be handed."""

    def __init__(self, dim: int, noise: NoiseModel, ledger: Optional[QueryLedger] = None):
        self.dim = dim
        self.noise = noise
        self.ledger = ledger if ledger is not None else QueryLedger()

    @property
    def calls(self) -> int:
        return self.ledger.total

    @property
    def cost_per_sample(self) -> int:
        """Ledger samples charged per sample of a ``query_batch`` call."""
        return 1

    def set_ball(self, ball_id: int):
        """Tag subsequent queries with the safety ball they are restricted to."""
        self.ledger.ball = ball_id

    def query(self, x, rng: np.random.Generator) -> OracleSample:
        """Draw a single noisy sample at x."""
        batch = self.query_batch(x, 1, rng)
        return OracleSample(batch.f_value, batch.f_grad, batch.g_value, batch.g_grad, batch.query_index)

    @abstractmethod
    def query_batch(self, x, n: int, rng: np.random.Generator) -> BatchSample:
        """Draw ``n`` independent samples at x and return their means."""
        pass

    def sample_values(self, x, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        """Mean objective and constraint values of ``n`` samples at x."""
        batch = self.query_batch(x, n, rng)
        return batch.f_value, batch.g_value

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise OracleError(f"expected a point of length {self.dim}, got shape {x.shape}")
        return x


class NoisyOracle(FirstOrderOracle):
    """First-order oracle adding independent Gaussian noise to the analytic maps."""

    def __init__(self, spec: ProblemSpec, noise: NoiseModel, ledger: Optional[QueryLedger] = None):
        super().__init__(spec.dim, noise, ledger)
        self._spec = spec

    def query_batch(self, x, n: int, rng: np.random.Generator) -> BatchSample:
        x = self._check_point(x)
        n = int(n)
        if n < 1:
            raise OracleError(f"batch size must be at least 1, got: {n}")
        f_value, f_grad = self._spec.objective(x)
        g_value, g_grad = self._spec.constraint(x)
        f_grad = np.array(f_grad, dtype=float)
        g_grad = np.array(g_grad, dtype=float)
        index = self.ledger.append(x, n)

        sigma, sigma_hat = self.noise.sigma, self.noise.sigma_hat
        if sigma > 0:
            values = rng.normal(0.0, sigma, size=(2, n)).mean(axis=1)
            f_value += values[0]
            g_value += values[1]
        if sigma_hat > 0:
            # per-coordinate variance sigma_hat^2 / d, total sigma_hat^2
            scale = sigma_hat / math.sqrt(self.dim)
            grads = rng.normal(0.0, scale, size=(2, n, self.dim)).mean(axis=1)
            f_grad = f_grad + grads[0]
            g_grad = g_grad + grads[1]
        return BatchSample(float(f_value), f_grad, float(g_value), g_grad, n, index)


class NoisyValueOracle:
    """Zeroth-order oracle: noisy objective and constraint values only."""

    def __init__(self, spec: ProblemSpec, noise: NoiseModel, ledger: Optional[QueryLedger] = None):
        self.dim = spec.dim
        self.noise = noise
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._spec = spec

    def query_values(self, x, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        """Mean of ``n`` noisy (F(x), G(x)) draws."""
        x = np.asarray(x, dtype=float)
        n = int(n)
        if n < 1:
            raise OracleError(f"batch size must be at least 1, got: {n}")
        self.ledger.append(x, n)
        f_value = self._spec.objective(x)[0]
        g_value = self._spec.constraint(x)[0]
        if self.noise.sigma > 0:
            noise = rng.normal(0.0, self.noise.sigma, size=(2, n)).mean(axis=1)
            f_value += noise[0]
            g_value += noise[1]
        return float(f_value), float(g_value)


class FiniteDifferenceOracle(FirstOrderOracle):
    """First-order contract on top of a value oracle via central differences."""

    def __init__(self, value_oracle: NoisyValueOracle, h: float):
        if not h > 0:
            raise OracleError(f"finite-difference step must be positive, got: {h}")
        sigma = value_oracle.noise.sigma
        # noise of a central difference per coordinate is sigma * sqrt(2) / (2h)
        sigma_hat = sigma * math.sqrt(2.0) / (2.0 * h) * math.sqrt(value_oracle.dim)
        super().__init__(value_oracle.dim, NoiseModel(sigma, sigma_hat), value_oracle.ledger)
        self.value_oracle = value_oracle
        self.h = h

    @property
    def stencil_radius(self) -> float:
        return self.h

    @property
    def cost_per_sample(self) -> int:
        return 2 * self.dim + 1

    def query_batch(self, x, n: int, rng: np.random.Generator) -> BatchSample:
        x = self._check_point(x)
        index = self.ledger.total
        f_value, g_value = self.value_oracle.query_values(x, n, rng)
        f_grad = np.zeros(self.dim)
        g_grad = np.zeros(self.dim)
        for i in range(self.dim):
            step = np.zeros(self.dim)
            step[i] = self.h
            f_plus, g_plus = self.value_oracle.query_values(x + step, n, rng)
            f_minus, g_minus = self.value_oracle.query_values(x - step, n, rng)
            f_grad[i] = (f_plus - f_minus) / (2.0 * self.h)
            g_grad[i] = (g_plus - g_minus) / (2.0 * self.h)
        return BatchSample(f_value, f_grad, g_value, g_grad, n, index)

    def sample_values(self, x, n: int, rng: np.random.Generator) -> Tuple[float, float]:
        return self.value_oracle.query_values(self._check_point(x), n, rng)


def fd_gradient_adapter(value_only_oracle: NoisyValueOracle, h: float) -> FiniteDifferenceOracle:
    """Wrap a zeroth-order oracle into the first-order contract (2d value queries per gradient)."""
    return FiniteDifferenceOracle(value_only_oracle, h)


class UcbEstimate(NamedTuple):
    g_hat: float
    n_used: int
    f_mean: float


def ucb_batch_size(sigma: float, eps_t: float, T_max: int, delta: float) -> int:
    """n_t = max(1, ceil(4 sigma^2 / eps_t^2 * ln(T_max / delta)))."""
    log_term = math.log(max(T_max, 1) / delta)
    return max(1, math.ceil(4.0 * sigma ** 2 / eps_t ** 2 * log_term))


def estimate_constraint_ucb(oracle: FirstOrderOracle, x, eps_t: float, T_max: int,
                            delta: float, rng: np.random.Generator) -> UcbEstimate:
    """Minibatch mean of G(x) plus a confidence bonus: an upper bound on g(x) w.p. 1 - delta/T_max."""
    if not eps_t > 0:
        raise OracleError(f"eps_t must be positive, got: {eps_t}")
    if not 0 < delta < 1:
        raise OracleError(f"delta must lie in (0, 1), got: {delta}")
    sigma = oracle.noise.sigma
    n = ucb_batch_size(sigma, eps_t, T_max, delta)
    f_mean, g_mean = oracle.sample_values(x, n, rng)
    bonus = sigma * math.sqrt(math.log(max(T_max, 1) / delta) / n) if sigma > 0 else 0.0
    return UcbEstimate(g_mean + bonus, n, f_mean)


def max_reduce(constraints: Sequence[ValueMap]) -> ValueMap:
    """Pointwise maximum of value-only constraint maps (non-smooth)."""
    constraints = list(constraints)
    if not constraints:
        raise OracleError("max_reduce needs at least one constraint")
    if len(constraints) == 1:
        return constraints[0]

    def reduced(x):
        return np.max(np.stack([np.asarray(g(x), dtype=float) for g in constraints]), axis=0)

    return reduced


def _uniform_ball(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    directions = _uniform_sphere(rng, n, dim)
    radii = rng.random(n) ** (1.0 / dim)
    return directions * radii[:, None]


def _uniform_sphere(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class SmoothedConstraint:
    """Monte Carlo oracle for g_nu(x) = E[g(x + nu u)], u uniform on the unit ball.

    ``g`` must evaluate row-wise on (n, d) arrays.
    """

    def __init__(self, g: ValueMap, nu: float, n_mc: int, rng: np.random.Generator, dim: int = 2):
        if not nu > 0:
            raise OracleError(f"smoothing radius must be positive, got: {nu}")
        if not (isinstance(n_mc, int) and n_mc >= 1):
            raise OracleError(f"n_mc must be a positive integer, got: {n_mc}")
        self.g = g
        self.nu = nu
        self.n_mc = n_mc
        self.rng = rng
        self.dim = dim

    def sample_values(self, x, n: int, rng: np.random.Generator) -> np.ndarray:
        """n unbiased draws of g_nu(x)."""
        x = np.asarray(x, dtype=float)
        return np.asarray(self.g(x + self.nu * _uniform_ball(rng, n, self.dim)), dtype=float)

    def sample_gradients(self, x, n: int, rng: np.random.Generator) -> np.ndarray:
        """n two-point estimates (d / 2nu)(g(x + nu v) - g(x - nu v)) v, v on the sphere."""
        x = np.asarray(x, dtype=float)
        v = _uniform_sphere(rng, n, self.dim)
        diff = np.asarray(self.g(x + self.nu * v), dtype=float) - np.asarray(self.g(x - self.nu * v), dtype=float)
        return (self.dim / (2.0 * self.nu)) * diff[:, None] * v

    def value(self, x) -> float:
        return float(self.sample_values(x, self.n_mc, self.rng).mean())

    def gradient(self, x) -> np.ndarray:
        return self.sample_gradients(x, self.n_mc, self.rng).mean(axis=0)


def randomized_smoothing(g: ValueMap, nu: float, n_mc: int, rng: np.random.Generator,
                         dim: int = 2) -> SmoothedConstraint:
    """Smoothed oracle for g_nu with uniform-ball perturbations."""
    return SmoothedConstraint(g, nu, n_mc, rng, dim)


class SmoothedConstraintOracle(FirstOrderOracle):
    """Exact objective channel, constraint channel sampling a smoothed constraint.

    Each constraint draw g(x + nu u) lies within nu * L_g of g_nu(x), so the
    value channel is sub-Gaussian with sigma = nu * L_g; the two-point gradient
    draws are bounded by d * L_g.
    """

    def __init__(self, spec: ProblemSpec, smoothed: SmoothedConstraint,
                 ledger: Optional[QueryLedger] = None):
        noise = NoiseModel(sigma=smoothed.nu * spec.L_g, sigma_hat=spec.dim * spec.L_g)
        super().__init__(spec.dim, noise, ledger)
        self._spec = spec
        self.smoothed = smoothed

    def query_batch(self, x, n: int, rng: np.random.Generator) -> BatchSample:
        x = self._check_point(x)
        n = int(n)
        if n < 1:
            raise OracleError(f"batch size must be at least 1, got: {n}")
        index = self.ledger.append(x, n)
        f_value, f_grad = self._spec.objective(x)
        g_value = float(self.smoothed.sample_values(x, n, rng).mean())
        g_grad = self.smoothed.sample_gradients(x, n, rng).mean(axis=0)
        return BatchSample(float(f_value), np.array(f_grad, dtype=float), g_value, g_grad, n, index)
