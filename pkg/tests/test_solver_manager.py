import numpy as np
import pytest

from config import RunConfig
from config_validator import ALGORITHMS
from oracle import NoiseModel, NoisyOracle, QueryLedger
from problem import make_nonconvex_benchmark
from solver_api import SolverBase, SolverEvent, hook
from solver_manager import SolverManager, UnknownSolverError
from trace_manager import RunTrace


class Recorder:
    def __init__(self):
        self.events = []

    @hook(SolverEvent.RUN_STARTED)
    def on_started(self, run_id, algorithm):
        self.events.append(("started", run_id, algorithm))

    @hook(SolverEvent.RUN_FINISHED)
    def on_finished(self, run_id, algorithm, trace):
        self.events.append(("finished", run_id, trace.outcome))

    @hook(SolverEvent.RUN_FAILED)
    def on_failed(self, run_id, algorithm, error):
        self.events.append(("failed", run_id, str(error)))


class Broken:
    @hook(SolverEvent.RUN_STARTED)
    def explode(self, run_id, algorithm):
        raise RuntimeError("listener failure")


class FailingSolver(SolverBase):
    name = "failing"

    def solve(self, spec, oracle, rng):
        raise RuntimeError("solver failure")


class FixedSolver(SolverBase):
    name = "fixed"

    def solve(self, spec, oracle, rng):
        return RunTrace(run_id=oracle.ledger.run_id, outcome="Converged")


def test_builtin_names():
    assert SolverManager().names() == sorted(ALGORITHMS)


def test_builtin_solvers_are_described_by_their_docstrings():
    manager = SolverManager()
    for name in manager.names():
        solver_class = manager.solvers[name]
        assert solver_class.name == name
        assert solver_class.__doc__
        assert not hasattr(solver_class, "get_description")


def test_unknown_solver():
    with pytest.raises(UnknownSolverError):
        SolverManager().get("adam", RunConfig())


def test_solver_config_carries_targets():
    solver = SolverManager().get("scsa", RunConfig(eps_p=0.01, max_outer=7))
    cfg = solver.scsa_config()
    assert cfg.eps_p == 0.01
    assert cfg.max_outer == 7


def test_events_reach_listeners(quadratic, rng):
    manager = SolverManager()
    manager.register(FixedSolver)
    recorder = Recorder()
    manager.add_listener(recorder)
    oracle = NoisyOracle(quadratic, NoiseModel(), QueryLedger("run-1"))
    trace = manager.run("fixed", quadratic, oracle, RunConfig(), rng)
    assert trace.diagnostics["algorithm"] == "fixed"
    assert recorder.events == [("started", "run-1", "fixed"), ("finished", "run-1", "Converged")]

    manager.remove_listener(recorder)
    manager.run("fixed", quadratic, oracle, RunConfig(), rng)
    assert len(recorder.events) == 2


def test_failure_event_and_reraise(quadratic, rng):
    manager = SolverManager()
    manager.register(FailingSolver)
    recorder = Recorder()
    manager.add_listener(recorder)
    with pytest.raises(RuntimeError):
        manager.run("failing", quadratic, NoisyOracle(quadratic, NoiseModel()), RunConfig(), rng)
    assert recorder.events[-1] == ("failed", "", "solver failure")


def test_listener_errors_do_not_abort_runs(quadratic, rng):
    manager = SolverManager()
    manager.register(FixedSolver)
    manager.add_listener(Broken())
    trace = manager.run("fixed", quadratic, NoisyOracle(quadratic, NoiseModel()), RunConfig(), rng)
    assert trace.outcome == "Converged"


@pytest.mark.parametrize("name", ["scsa", "convex"])
def test_convexity_requirements(name):
    spec = make_nonconvex_benchmark(2, 0.5)
    manager = SolverManager()
    with pytest.raises(ValueError):
        manager.run(name, spec, NoisyOracle(spec, NoiseModel()), RunConfig(), np.random.default_rng(0))


def test_lbsgd_run_is_labelled(quadratic, rng):
    config = RunConfig(algorithm="lbsgd", max_oracle_calls=200)
    trace = SolverManager().run("lbsgd", quadratic, NoisyOracle(quadratic, NoiseModel()), config, rng)
    assert trace.diagnostics["algorithm"] == "lbsgd-simplified"
