"""
SafePD Solver Manager Module

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

This module maps algorithm names to solver adapters and dispatches run
events to registered listeners.
"""

import logging
from typing import Callable, Dict, List, Type

import numpy as np

from baseline import BASELINE_LABEL, StepRule, lbsgd_baseline
from config import RunConfig
from oracle import FirstOrderOracle
from problem import ConvexityClass, ProblemSpec
from proximal import convex_solve, safepd_solve
from scsa import scsa_solve
from solver_api import SolverBase, SolverEvent
from trace_manager import RunTrace


class UnknownSolverError(KeyError):
    """Exception raised when an algorithm name is not registered."""
    pass


class ScsaSolver(SolverBase):
    """Safe primal-dual method for strongly convex problems."""

    name = "scsa"

    def accepts(self, spec: ProblemSpec) -> bool:
        return spec.is_strongly_convex

    def solve(self, spec, oracle, rng) -> RunTrace:
        return scsa_solve(spec, oracle, self.scsa_config(), rng).trace


class ConvexSolver(SolverBase):
    """SCSA on a statically regularized convex problem."""

    name = "convex"

    def accepts(self, spec: ProblemSpec) -> bool:
        return spec.convexity_class is not ConvexityClass.NON_CONVEX

    def solve(self, spec, oracle, rng) -> RunTrace:
        _, trace = convex_solve(spec, oracle, self.scsa_config(), self.config.eps, rng)
        return trace


class SafePDSolver(SolverBase):
    """Proximal safe primal-dual method for weakly convex problems."""

    name = "safepd"

    def solve(self, spec, oracle, rng) -> RunTrace:
        return safepd_solve(spec, oracle, self.scsa_config(), rng, rho_f=self.config.rho_f,
                            rho_g=self.config.rho_g, max_rounds=self.config.max_rounds).trace


class LbsgdSolver(SolverBase):
    """Simplified log-barrier SGD baseline with a boundary-safe step cap."""

    name = "lbsgd"

    def solve(self, spec, oracle, rng) -> RunTrace:
        rule = StepRule(self.config.step, self.config.step_decay)
        return lbsgd_baseline(spec, oracle, self.config.barrier_eta, rule,
                              self.config.max_oracle_calls, rng, delta=self.config.delta)


BUILTIN_SOLVERS: List[Type[SolverBase]] = [ScsaSolver, ConvexSolver, SafePDSolver, LbsgdSolver]


class SolverManager:
    """Registry of algorithms plus run-event dispatch."""

    def __init__(self):
        self.solvers: Dict[str, Type[SolverBase]] = {}
        self.event_hooks: Dict[str, List[Callable]] = {}
        self.logger = logging.getLogger("safepd.solvers")
        for solver_class in BUILTIN_SOLVERS:
            self.register(solver_class)

    def register(self, solver_class: Type[SolverBase]):
        """Register an algorithm under its ``name``."""
        if not solver_class.name:
            raise ValueError(f"{solver_class.__name__} has no name")
        if solver_class.name in self.solvers:
            self.logger.warning(f"Replacing registered solver: {solver_class.name}")
        self.solvers[solver_class.name] = solver_class

    def names(self) -> List[str]:
        return sorted(self.solvers)

    def get(self, name: str, config: RunConfig) -> SolverBase:
        """Instantiate the solver registered as ``name``."""
        try:
            solver_class = self.solvers[name]
        except KeyError:
            raise UnknownSolverError(f"Unknown algorithm: {name}") from None
        return solver_class(self, config)

    def add_listener(self, listener):
        """Register every ``@hook``-decorated method of ``listener``."""
        for attr_name in dir(listener):
            attr = getattr(listener, attr_name)
            if hasattr(attr, '_solver_hooks'):
                for event_type in attr._solver_hooks:
                    self.event_hooks.setdefault(event_type, []).append(attr)

    def remove_listener(self, listener):
        for event_type, hooks in self.event_hooks.items():
            self.event_hooks[event_type] = [
                hook for hook in hooks
                if not hasattr(hook, '__self__') or hook.__self__ is not listener
            ]

    def emit_event(self, event_type: str, **kwargs):
        """Emit an event to all registered hooks; listener errors are logged, not raised."""
        for hook in self.event_hooks.get(event_type, []):
            try:
                hook(**kwargs)
            except Exception as e:
                self.logger.error(f"Error in solver hook for {event_type}: {e}")

    def run(self, name: str, spec: ProblemSpec, oracle: FirstOrderOracle, config: RunConfig,
            rng: np.random.Generator) -> RunTrace:
        """Solve ``spec`` with the named algorithm, emitting run events around it."""
        solver = self.get(name, config)
        if not solver.accepts(spec):
            raise ValueError(f"{name} cannot solve {spec.name} ({spec.convexity_class.value})")
        run_id = oracle.ledger.run_id
        self.emit_event(SolverEvent.RUN_STARTED, run_id=run_id, algorithm=name)
        try:
            trace = solver.solve(spec, oracle, rng)
        except Exception as e:
            self.emit_event(SolverEvent.RUN_FAILED, run_id=run_id, algorithm=name, error=e)
            raise
        trace.diagnostics.setdefault("algorithm", BASELINE_LABEL if name == "lbsgd" else name)
        self.emit_event(SolverEvent.RUN_FINISHED, run_id=run_id, algorithm=name, trace=trace)
        self.logger.info(f"{name} run {run_id}: {trace.outcome}, {trace.total_calls} calls")
        return trace
