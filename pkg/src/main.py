"""
SafePD - safe black-box constrained optimization

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

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from config import RunConfig, load_run_config
from config_validator import ConfigError
from oracle import (FirstOrderOracle, NoiseModel, NoisyOracle, NoisyValueOracle, QueryLedger,
                    SmoothedConstraintOracle, fd_gradient_adapter, max_reduce, randomized_smoothing)
from problem import TWO_HALFSPACE, ProblemSpec, ProblemSpecError, eval_true, make_benchmark, \
    two_halfspace_constraints
from scsa import Outcome, kkt_residual
from solver_api import SolverEvent, hook
from solver_manager import SolverManager, UnknownSolverError
from trace_manager import RunTrace, TraceFormatError, TraceStore, load_trace, read_ledger_csv
from verify import (VerifyError, audit_trace, best_gap_curve, check_dual_regularity, complexity_ratio,
                    dual_opt_bisection, log_spaced_budgets)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

GAP_POINTS = 32

logger = logging.getLogger("safepd.cli")


def setup_logging():
    """Install one stderr handler on the ``safepd`` logger; level from SAFEPD_LOG."""
    root = logging.getLogger("safepd")
    level_name = os.environ.get("SAFEPD_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        root.addHandler(handler)
    root.setLevel(level)
    if level_name and getattr(logging, level_name, None) is None:
        logger.warning(f"Unknown SAFEPD_LOG level '{level_name}', using WARNING")


class ProgressLogger:
    """Run-event listener that reports progress through the CLI logger."""

    @hook(SolverEvent.RUN_STARTED)
    def on_run_started(self, run_id, algorithm):
        logger.info(f"started {run_id} ({algorithm})")

    @hook(SolverEvent.RUN_FINISHED)
    def on_run_finished(self, run_id, algorithm, trace):
        logger.info(f"finished {run_id}: {trace.outcome}")

    @hook(SolverEvent.RUN_FAILED)
    def on_run_failed(self, run_id, algorithm, error):
        logger.error(f"{run_id} failed: {error}")


def build_problem(config: RunConfig) -> ProblemSpec:
    return make_benchmark(config.problem, config.dim, **config.problem_params)


def build_oracle(spec: ProblemSpec, config: RunConfig, ledger: QueryLedger,
                 rng: np.random.Generator) -> FirstOrderOracle:
    """First-order oracle for the configured feedback mode."""
    if spec.name == TWO_HALFSPACE:
        smoothed = randomized_smoothing(max_reduce(two_halfspace_constraints()),
                                        config.problem_params.get("nu", 0.1), config.n_mc, rng, dim=2)
        return SmoothedConstraintOracle(spec, smoothed, ledger)
    if config.feedback == "zeroth_order":
        return fd_gradient_adapter(NoisyValueOracle(spec, NoiseModel(config.sigma), ledger), config.h)
    return NoisyOracle(spec, NoiseModel(config.sigma, config.sigma_hat), ledger)


def make_run_id(config: RunConfig, algorithm: str, seed: int) -> str:
    return f"{config.problem}-d{config.dim}-{algorithm}-seed{seed}"


def execute_run(config: RunConfig, algorithm: str, seed: int,
                manager: SolverManager) -> Tuple[RunTrace, QueryLedger, ProblemSpec]:
    """One seeded solve: fresh generator, ledger and oracle; trace filled with config and KKT."""
    spec = build_problem(config)
    rng = np.random.default_rng(seed)
    ledger = QueryLedger(make_run_id(config, algorithm, seed))
    oracle = build_oracle(spec, config, ledger, rng)
    trace = manager.run(algorithm, spec, oracle, config, rng)
    trace.run_id = ledger.run_id
    trace.config = replace(config, algorithm=algorithm, seed=seed).snapshot()
    trace.diagnostics["stencil_radius"] = float(getattr(oracle, "stencil_radius", 0.0))
    trace.diagnostics["complexity_ratio"] = complexity_ratio(trace, spec, config.eps, oracle.noise.sigma,
                                                             oracle.noise.sigma_hat)
    if trace.x_final is not None and trace.lambda_final is not None:
        trace.final_kkt = kkt_residual(spec, trace.x_final, float(trace.lambda_final))
    return trace, ledger, spec


def exit_code_for(outcome: str, algorithm: str) -> int:
    if outcome in (Outcome.CONVERGED.value, Outcome.LAMBDA_ZERO.value, Outcome.BOUNDARY_STOP.value):
        return EXIT_OK
    if outcome == Outcome.SAFETY_ABORT.value:
        return EXIT_CHECK_FAILED
    if algorithm == "lbsgd" and outcome == Outcome.BUDGET_EXCEEDED.value:
        # the baseline always runs until its budget is spent
        return EXIT_OK
    return EXIT_BUDGET


def summary_line(trace: RunTrace, spec: ProblemSpec) -> str:
    parts = [f"outcome={trace.outcome}", f"calls={trace.total_calls}"]
    if trace.x_final is not None:
        f, g = eval_true(spec, trace.x_final)
        if spec.f_star is not None:
            parts.append(f"gap={f.value - spec.f_star:.6g}")
        parts.append(f"g={g.value:.6g}")
    if trace.final_kkt is not None:
        parts.append(f"kkt_grad={trace.final_kkt.grad_norm:.4g}")
        parts.append(f"kkt_comp={trace.final_kkt.comp_slack:.4g}")
    if "complexity_ratio" in trace.diagnostics:
        parts.append(f"complexity_ratio={trace.diagnostics['complexity_ratio']:.3g}")
    parts.append("violations=deferred-to-audit")
    return " ".join(parts)


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "seeds", None) is not None:
        overrides["run.seeds"] = args.seeds
    if getattr(args, "out", None) is not None:
        overrides["run.out"] = args.out
    if getattr(args, "jobs", None) is not None:
        overrides["run.jobs"] = args.jobs
    algos = getattr(args, "algo", None)
    if algos:
        if args.command == "run":
            overrides["algorithm.name"] = algos[0]
        else:
            overrides["algorithm.algorithms"] = list(algos)
    return overrides


def _load(args) -> Optional[RunConfig]:
    try:
        return load_run_config(args.config, _overrides(args))
    except FileNotFoundError as e:
        print(f"error: config file not found: {e}", file=sys.stderr)
    except ConfigError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
    return None


def cli_run(args) -> int:
    config = _load(args)
    if config is None:
        return EXIT_USAGE
    manager = SolverManager()
    manager.add_listener(ProgressLogger())
    try:
        trace, ledger, spec = execute_run(config, config.algorithm, config.seed, manager)
    except (ProblemSpecError, UnknownSolverError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    store = TraceStore(config.out)
    try:
        store.save_trace(trace)
        store.save_ledger(ledger, spec.dim)
    except OSError as e:
        print(f"error: cannot write results: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(summary_line(trace, spec))
    return exit_code_for(trace.outcome, config.algorithm)


def _bench_one(config: RunConfig, algorithm: str, seed: int, budgets: List[int]) -> dict:
    row = {"algorithm": algorithm, "seed": seed}
    manager = SolverManager()
    manager.add_listener(ProgressLogger())
    try:
        trace, ledger, spec = execute_run(config, algorithm, seed, manager)
        store = TraceStore(os.path.join(config.out, algorithm, f"seed-{seed}"))
        store.save_trace(trace)
        store.save_ledger(ledger, spec.dim)
        report = audit_trace(trace, ledger, spec)
        row.update(outcome=trace.outcome, calls=ledger.total, violations=report.violations,
                   ratio=trace.diagnostics["complexity_ratio"], curve=best_gap_curve(trace, spec, budgets))
    except Exception as e:
        logger.error(f"bench run {algorithm}/seed {seed} failed: {e}")
        row.update(outcome=f"Error: {e}", calls=0, violations=0, ratio=float("nan"),
                   curve=[float("nan")] * len(budgets))
    return row


def cli_bench(args) -> int:
    config = _load(args)
    if config is None:
        return EXIT_USAGE
    algorithms = config.algorithm_list
    seeds = config.seed_list
    budgets = log_spaced_budgets(config.max_oracle_calls, GAP_POINTS)
    jobs = [(algorithm, seed) for algorithm in algorithms for seed in seeds]
    if not jobs:
        logger.warning("bench: no seeds requested, writing an empty summary")
        print("warning: no seeds requested", file=sys.stderr)

    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        rows = list(pool.map(lambda job: _bench_one(config, job[0], job[1], budgets), jobs))

    try:
        os.makedirs(config.out, exist_ok=True)
        path = os.path.join(config.out, "summary.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["algorithm", "seed", "outcome", "calls", "violations", "complexity_ratio"]
                            + [f"gap@{b}" for b in budgets])
            for row in rows:
                label = "lbsgd-simplified" if row["algorithm"] == "lbsgd" else row["algorithm"]
                writer.writerow([label, row["seed"], row["outcome"], row["calls"], row["violations"],
                                 repr(float(row["ratio"]))]
                                + [repr(float(v)) for v in row["curve"]])
    except OSError as e:
        print(f"error: cannot write summary: {e}", file=sys.stderr)
        return EXIT_USAGE

    for algorithm in algorithms:
        finals = [row["curve"][-1] for row in rows if row["algorithm"] == algorithm
                  and row["curve"] and row["curve"][-1] == row["curve"][-1]]
        if finals:
            print(f"{algorithm}: median best gap {statistics.median(finals):.6g} over {len(finals)} runs")
    return EXIT_OK


def cli_audit(args) -> int:
    ledger_path = args.ledger or os.path.join(os.path.dirname(args.trace) or ".", "ledger.csv")
    try:
        trace = load_trace(args.trace)
        ledger = read_ledger_csv(ledger_path)
        snapshot = trace.config
        spec = make_benchmark(snapshot["problem"], int(snapshot["dim"]), **snapshot.get("problem_params", {}))
        report = audit_trace(trace, ledger, spec)
    except FileNotFoundError as e:
        print(f"error: file not found: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceFormatError, VerifyError, ProblemSpecError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK if report.clean else EXIT_CHECK_FAILED


def cli_verify(args) -> int:
    try:
        spec = make_benchmark(args.problem, args.dim)
        checks = ["dual-regularity", "bisection"] if args.check == "all" else [args.check]
        results = {}
        passed = True
        lambda_check = spec.delta_f / spec.alpha
        lambda_star = dual_opt_bisection(spec, spec.delta_f / spec.beta, tol=1e-10)
        if "bisection" in checks:
            ok = spec.lambda_star is None or abs(lambda_star - spec.lambda_star) <= 1e-6
            results["bisection"] = {"lambda_star": lambda_star, "passed": ok}
            passed = passed and ok
        if "dual-regularity" in checks:
            grid = np.linspace(lambda_star, lambda_check, args.grid_points)
            report = check_dual_regularity(spec, grid, lambda_star=lambda_star)
            results["dual-regularity"] = report.to_dict()
            passed = passed and report.passed
    except (ProblemSpecError, VerifyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(results, sort_keys=True))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safepd", description="Safe black-box constrained optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one solve")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--algo", action="append", help="algorithm name")
    run.add_argument("--out")
    run.set_defaults(func=cli_run)

    bench = sub.add_parser("bench", help="run algorithms x seeds and write a summary CSV")
    bench.add_argument("--config", required=True)
    bench.add_argument("--seed", type=int, help="first seed")
    bench.add_argument("--seeds", type=int, help="number of seeds")
    bench.add_argument("--algo", action="append", help="algorithm name (repeatable)")
    bench.add_argument("--out")
    bench.add_argument("--jobs", type=int)
    bench.set_defaults(func=cli_bench)

    audit = sub.add_parser("audit", help="replay a ledger against the true constraint")
    audit.add_argument("--trace", required=True)
    audit.add_argument("--ledger")
    audit.set_defaults(func=cli_audit)

    verify = sub.add_parser("verify", help="dual-function checks on a benchmark")
    verify.add_argument("--problem", default="quadratic")
    verify.add_argument("--dim", type=int, default=2)
    verify.add_argument("--check", choices=["dual-regularity", "bisection", "all"], default="all")
    verify.add_argument("--grid-points", type=int, default=64)
    verify.set_defaults(func=cli_verify)
    return parser


def main(argv=None) -> int:
    """Main application entry point."""
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
