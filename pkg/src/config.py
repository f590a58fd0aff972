"""
SafePD Configuration Module

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

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from config_parser import parse_config_file
from config_validator import validate_config


@dataclass(frozen=True)
class RunConfig:
    """Flattened, validated settings of one run or bench invocation."""

    problem: str = "quadratic"
    dim: int = 2
    problem_params: Dict[str, Any] = field(default_factory=dict)
    sigma: float = 0.0
    sigma_hat: float = 0.0
    algorithm: str = "scsa"
    algorithms: List[str] = field(default_factory=list)
    rho_f: Optional[float] = None
    rho_g: Optional[float] = None
    max_rounds: int = 1000
    barrier_eta: float = 0.1
    step: float = 0.05
    step_decay: str = "constant"
    eps_p: float = 0.05
    eps_c: float = 0.05
    eps: float = 0.2
    delta: float = 0.01
    max_oracle_calls: int = 1000000
    max_inner_steps: Optional[int] = None
    max_outer: Optional[int] = None
    feedback: str = "first_order"
    h: float = 0.001
    n_mc: int = 100
    seed: int = 0
    seeds: int = 1
    jobs: int = 1
    out: str = "out"

    @property
    def seed_list(self) -> List[int]:
        return [self.seed + i for i in range(self.seeds)]

    @property
    def algorithm_list(self) -> List[str]:
        return list(self.algorithms) if self.algorithms else [self.algorithm]

    def snapshot(self) -> Dict[str, Any]:
        """Settings that determine a run's results (output location excluded)."""
        data = asdict(self)
        for key in ("out", "jobs", "seeds", "algorithms"):
            data.pop(key)
        return data

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "RunConfig":
        problem = config["problem"]
        params = {}
        if problem["name"] == "quadratic" and problem.get("target") is not None:
            params["target"] = [float(v) for v in problem["target"]]
        elif problem["name"] == "nonconvex-gaussian":
            params["r"] = float(problem["r"])
        elif problem["name"] == "two-halfspace":
            params["nu"] = float(problem["nu"])
        algorithm = config["algorithm"]
        targets = config["targets"]
        budget = config["budget"]
        feedback = config["feedback"]
        run = config["run"]
        return cls(
            problem=problem["name"],
            dim=2 if problem["name"] == "two-halfspace" else int(problem["dim"]),
            problem_params=params,
            sigma=float(config["noise"]["sigma"]),
            sigma_hat=float(config["noise"]["sigma_hat"]),
            algorithm=algorithm["name"],
            algorithms=list(algorithm.get("algorithms") or []),
            rho_f=algorithm["rho_f"],
            rho_g=algorithm["rho_g"],
            max_rounds=int(algorithm["max_rounds"]),
            barrier_eta=float(algorithm["barrier_eta"]),
            step=float(algorithm["step"]),
            step_decay=algorithm["step_decay"],
            eps_p=float(targets["eps_p"]),
            eps_c=float(targets["eps_c"]),
            eps=float(targets["eps"]),
            delta=float(targets["delta"]),
            max_oracle_calls=int(budget["max_oracle_calls"]),
            max_inner_steps=budget["max_inner_steps"],
            max_outer=budget["max_outer"],
            feedback=feedback["mode"],
            h=float(feedback["h"]),
            n_mc=int(feedback["n_mc"]),
            seed=int(run["seed"]),
            seeds=int(run["seeds"]),
            jobs=int(run["jobs"]),
            out=str(run["out"]),
        )


class Config:
    """A parsed and validated configuration file with dotted overrides applied."""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        self.config_path = config_path
        raw = parse_config_file(config_path) if config_path else {}
        for key, value in (overrides or {}).items():
            _set_dotted(raw, key, value)
        self.config = validate_config(raw)

    def to_run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def _set_dotted(config: Dict[str, Any], key: str, value: Any):
    keys = key.split('.')
    node = config
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_run_config(config_path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse, apply dotted overrides such as ``{"run.seed": 7}``, validate and flatten."""
    return Config(config_path, overrides).to_run_config()
