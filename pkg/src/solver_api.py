"""
SafePD Solver API Module

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

This module defines the interface every registered algorithm implements
and the events the solver manager emits around a run.
"""

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

import numpy as np

from config import RunConfig
from oracle import FirstOrderOracle
from problem import ProblemSpec
from scsa import ScsaConfig
from trace_manager import RunTrace

if TYPE_CHECKING:
    from solver_manager import SolverManager


class SolverBase(ABC):
    """Base class for all registered algorithms."""

    name = ""

    def __init__(self, solver_manager: 'SolverManager', config: RunConfig):
        self.solver_manager = solver_manager
        self.config = config

    def scsa_config(self) -> ScsaConfig:
        """Targets and budgets of the run as an SCSA configuration."""
        return ScsaConfig(
            eps_p=self.config.eps_p,
            eps_c=self.config.eps_c,
            delta=self.config.delta,
            max_oracle_calls=self.config.max_oracle_calls,
            max_inner_steps=self.config.max_inner_steps,
            max_outer=self.config.max_outer,
        )

    def accepts(self, spec: ProblemSpec) -> bool:
        """Whether the algorithm's convexity requirements hold for ``spec``."""
        return True

    @abstractmethod
    def solve(self, spec: ProblemSpec, oracle: FirstOrderOracle, rng: np.random.Generator) -> RunTrace:
        """Run the algorithm and return its trace."""
        pass


class SolverEvent:
    """Solver event constants."""

    RUN_STARTED = "run_started"
    RUN_FINISHED = "run_finished"
    RUN_FAILED = "run_failed"


def hook(event_type: str):
    """Decorator to register a method as a listener for a solver event."""
    def decorator(func):
        if not hasattr(func, '_solver_hooks'):
            func._solver_hooks = []
        func._solver_hooks.append(event_type)
        return func
    return decorator
