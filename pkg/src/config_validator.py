"""
SafePD Configuration Validator Module

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

import copy
import logging
from typing import Any, Dict, List

logger = logging.getLogger("safepd.config")

PROBLEMS = ("quadratic", "nonconvex-gaussian", "two-halfspace")
ALGORITHMS = ("scsa", "convex", "safepd", "lbsgd")
FEEDBACK_MODES = ("first_order", "zeroth_order")

_DEFAULTS: Dict[str, Any] = {
    "problem": {
        "name": "quadratic",
        "dim": 2,
        "target": None,
        "r": 0.5,
        "nu": 0.1,
    },
    "noise": {
        "sigma": 0.0,
        "sigma_hat": 0.0,
    },
    "algorithm": {
        "name": "scsa",
        "algorithms": [],
        "rho_f": None,
        "rho_g": None,
        "max_rounds": 1000,
        "barrier_eta": 0.1,
        "step": 0.05,
        "step_decay": "constant",
    },
    "targets": {
        "eps_p": 0.05,
        "eps_c": 0.05,
        "eps": 0.2,
        "delta": 0.01,
    },
    "budget": {
        "max_oracle_calls": 1000000,
        "max_inner_steps": None,
        "max_outer": None,
    },
    "feedback": {
        "mode": "first_order",
        "h": 0.001,
        "n_mc": 100,
    },
    "run": {
        "seed": 0,
        "seeds": 1,
        "jobs": 1,
        "out": "out",
    },
}


class ConfigError(ValueError):
    """Exception raised for configuration errors that prevent a run."""
    pass


class ConfigValidator:
    """Validates run configuration values, separating errors from warnings."""

    def __init__(self):
        self.errors = []
        self.warnings = []

    @staticmethod
    def get_default_config() -> Dict[str, Any]:
        return copy.deepcopy(_DEFAULTS)

    def validate(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Merge the user config into the defaults and check every value."""
        self.errors = []
        self.warnings = []

        validated_config = self.get_default_config()
        self._merge_config(validated_config, config)

        self._validate_problem(validated_config["problem"])
        self._validate_noise(validated_config["noise"])
        self._validate_algorithm(validated_config["algorithm"])
        self._validate_targets(validated_config["targets"])
        self._validate_budget(validated_config["budget"])
        self._validate_feedback(validated_config["feedback"])
        self._validate_run(validated_config["run"])

        return validated_config

    def _merge_config(self, defaults: Dict[str, Any], user_config: Dict[str, Any], path: str = ""):
        for key, value in user_config.items():
            if key in defaults:
                if isinstance(defaults[key], dict):
                    if isinstance(value, dict):
                        self._merge_config(defaults[key], value, f"{path}{key}.")
                    else:
                        self.errors.append(f"'{path}{key}' must be a section")
                elif value is not None:
                    defaults[key] = value
            else:
                self.warnings.append(f"Unknown setting '{path}{key}' ignored")

    def _require_positive(self, section: Dict[str, Any], key: str, name: str, integer: bool = False):
        value = section.get(key)
        if value is None:
            return
        kinds = (int,) if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kinds) or value <= 0:
            kind = "integer" if integer else "number"
            self.errors.append(f"{name} must be a positive {kind}, got: {value}")

    def _validate_problem(self, problem: Dict[str, Any]):
        if problem["name"] not in PROBLEMS:
            self.errors.append(f"Unknown problem '{problem['name']}', expected one of {list(PROBLEMS)}")
        dim = problem["dim"]
        if isinstance(dim, bool) or not isinstance(dim, int) or dim < 2:
            self.errors.append(f"problem.dim must be an integer >= 2, got: {dim}")
        if problem["name"] == "two-halfspace" and dim != 2:
            self.warnings.append("two-halfspace is two-dimensional; problem.dim ignored")
        target = problem.get("target")
        if target is not None:
            if not isinstance(target, list) or not all(isinstance(v, (int, float)) for v in target):
                self.errors.append(f"problem.target must be a list of numbers, got: {target}")
            elif isinstance(dim, int) and len(target) != dim:
                self.errors.append(f"problem.target must have {dim} entries, got {len(target)}")
        self._require_positive(problem, "r", "problem.r")
        self._require_positive(problem, "nu", "problem.nu")
        nu = problem.get("nu")
        if isinstance(nu, (int, float)) and nu >= 1:
            self.errors.append(f"problem.nu must be below 1, got: {nu}")

    def _validate_noise(self, noise: Dict[str, Any]):
        for key in ("sigma", "sigma_hat"):
            value = noise[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                self.errors.append(f"noise.{key} must be a non-negative number, got: {value}")

    def _validate_algorithm(self, algorithm: Dict[str, Any]):
        names = [algorithm["name"]] + list(algorithm.get("algorithms") or [])
        for name in names:
            if name not in ALGORITHMS:
                self.errors.append(f"Unknown algorithm '{name}', expected one of {list(ALGORITHMS)}")
        self._require_positive(algorithm, "rho_f", "algorithm.rho_f")
        self._require_positive(algorithm, "rho_g", "algorithm.rho_g")
        self._require_positive(algorithm, "max_rounds", "algorithm.max_rounds", integer=True)
        self._require_positive(algorithm, "barrier_eta", "algorithm.barrier_eta")
        self._require_positive(algorithm, "step", "algorithm.step")
        if algorithm["step_decay"] not in ("constant", "sqrt"):
            self.errors.append(f"algorithm.step_decay must be 'constant' or 'sqrt', got: {algorithm['step_decay']}")

    def _validate_targets(self, targets: Dict[str, Any]):
        for key in ("eps_p", "eps_c", "eps"):
            self._require_positive(targets, key, f"targets.{key}")
            value = targets[key]
            if isinstance(value, (int, float)) and value > 1:
                self.warnings.append(f"targets.{key} = {value} is unusually loose")
        delta = targets["delta"]
        if isinstance(delta, bool) or not isinstance(delta, (int, float)) or not 0 < delta < 1:
            self.errors.append(f"targets.delta must lie in (0, 1), got: {delta}")

    def _validate_budget(self, budget: Dict[str, Any]):
        self._require_positive(budget, "max_oracle_calls", "budget.max_oracle_calls", integer=True)
        self._require_positive(budget, "max_inner_steps", "budget.max_inner_steps", integer=True)
        self._require_positive(budget, "max_outer", "budget.max_outer", integer=True)

    def _validate_feedback(self, feedback: Dict[str, Any]):
        if feedback["mode"] not in FEEDBACK_MODES:
            self.errors.append(f"feedback.mode must be one of {list(FEEDBACK_MODES)}, got: {feedback['mode']}")
        self._require_positive(feedback, "h", "feedback.h")
        self._require_positive(feedback, "n_mc", "feedback.n_mc", integer=True)

    def _validate_run(self, run: Dict[str, Any]):
        seed = run["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            self.errors.append(f"run.seed must be a non-negative integer, got: {seed}")
        seeds = run["seeds"]
        if isinstance(seeds, bool) or not isinstance(seeds, int) or seeds < 0:
            self.errors.append(f"run.seeds must be a non-negative integer, got: {seeds}")
        jobs = run["jobs"]
        if isinstance(jobs, bool) or not isinstance(jobs, int) or jobs < 1:
            self.warnings.append(f"run.jobs should be a positive integer, got: {jobs}; using 1")
            run["jobs"] = 1

    def get_errors(self) -> List[str]:
        """Get validation errors (critical issues)."""
        return self.errors.copy()

    def get_warnings(self) -> List[str]:
        """Get validation warnings (non-critical issues)."""
        return self.warnings.copy()


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Validate a configuration dictionary; raise ConfigError on critical issues."""
    validator = ConfigValidator()
    validated = validator.validate(config)

    for warning in validator.get_warnings():
        logger.warning(f"Config warning: {warning}")
    errors = validator.get_errors()
    if errors:
        raise ConfigError("; ".join(errors))
    return validated
