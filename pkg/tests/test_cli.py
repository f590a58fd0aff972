import csv
import json
import os

import pytest

from main import EXIT_BUDGET, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, GAP_POINTS, exit_code_for, main

QUADRATIC_CONFIG = """\
[problem]
name = "quadratic"
dim = 2

[algorithm]
name = "scsa"

[targets]
eps_p = 0.05
eps_c = 0.05
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture
def finished_run(tmp_path, capsys):
    config = _write(tmp_path, QUADRATIC_CONFIG)
    out = tmp_path / "out"
    code = main(["run", "--config", config, "--out", str(out)])
    return code, out, capsys.readouterr().out


def test_run_writes_trace_and_ledger(finished_run):
    code, out, stdout = finished_run
    assert code == EXIT_OK
    assert "outcome=Converged" in stdout
    trace = json.loads((out / "trace.json").read_text())
    assert trace["run_id"] == "quadratic-d2-scsa-seed0"
    assert trace["config"]["algorithm"] == "scsa"
    assert "out" not in trace["config"]
    assert trace["final_kkt"]["feasible"]
    assert trace["diagnostics"]["complexity_ratio"] > 0
    assert "complexity_ratio=" in stdout
    assert (out / "ledger.csv").read_text().startswith("# run_id=quadratic-d2-scsa-seed0\n")


def test_reruns_are_byte_identical(tmp_path):
    config = _write(tmp_path, QUADRATIC_CONFIG)
    for name in ("a", "b"):
        assert main(["run", "--config", config, "--out", str(tmp_path / name), "--seed", "3"]) == EXIT_OK
    for artifact in ("trace.json", "ledger.csv"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_run_usage_errors(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    invalid = _write(tmp_path, "[targets]\ndelta = 2\n", "invalid.toml")
    assert main(["run", "--config", invalid]) == EXIT_USAGE
    valid = _write(tmp_path, QUADRATIC_CONFIG, "valid.toml")
    assert main(["run", "--config", valid, "--algo", "adam"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_scsa_on_nonconvex_problem_is_a_usage_error(tmp_path):
    config = _write(tmp_path, '[problem]\nname = "nonconvex-gaussian"\n')
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_USAGE


def test_budget_exhaustion_exit_code(tmp_path):
    config = _write(tmp_path, QUADRATIC_CONFIG + "[budget]\nmax_oracle_calls = 50\n")
    assert main(["run", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_BUDGET


def test_baseline_run_exits_cleanly(tmp_path, capsys):
    config = _write(tmp_path, QUADRATIC_CONFIG + "[budget]\nmax_oracle_calls = 2000\n")
    code = main(["run", "--config", config, "--algo", "lbsgd", "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    trace = json.loads((tmp_path / "out" / "trace.json").read_text())
    assert trace["diagnostics"]["algorithm"] == "lbsgd-simplified"


@pytest.mark.parametrize("outcome,algorithm,expected", [
    ("Converged", "scsa", EXIT_OK),
    ("LambdaZero", "safepd", EXIT_OK),
    ("BoundaryStop", "lbsgd", EXIT_OK),
    ("BudgetExceeded", "lbsgd", EXIT_OK),
    ("BudgetExceeded", "scsa", EXIT_BUDGET),
    ("HorizonReached", "scsa", EXIT_BUDGET),
    ("OuterCapReached", "safepd", EXIT_BUDGET),
    ("SafetyAbort", "scsa", EXIT_CHECK_FAILED),
])
def test_exit_codes(outcome, algorithm, expected):
    assert exit_code_for(outcome, algorithm) == expected


def test_audit_clean_run(finished_run, capsys):
    _, out, _ = finished_run
    assert main(["audit", "--trace", str(out / "trace.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["violations"] == 0
    assert report["safety_ball_breaches"] == 0
    assert report["lambda_monotone"]


def test_audit_detects_violation(finished_run, capsys):
    _, out, _ = finished_run
    with open(out / "ledger.csv", "a", encoding="utf-8") as f:
        f.write("999999,0.0,3.0,1,-1\n")
    assert main(["audit", "--trace", str(out / "trace.json"),
                 "--ledger", str(out / "ledger.csv")]) == EXIT_CHECK_FAILED
    assert json.loads(capsys.readouterr().out)["violations"] == 1


def test_audit_missing_files(tmp_path):
    assert main(["audit", "--trace", str(tmp_path / "trace.json")]) == EXIT_USAGE


def test_audit_rejects_foreign_ledger(finished_run, tmp_path):
    _, out, _ = finished_run
    foreign = tmp_path / "foreign.csv"
    foreign.write_text("# run_id=other\nquery_index,x_0,x_1,n_samples,ball\n")
    assert main(["audit", "--trace", str(out / "trace.json"), "--ledger", str(foreign)]) == EXIT_USAGE


def test_verify_bisection(capsys):
    assert main(["verify", "--check", "bisection"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["bisection"]["lambda_star"] == pytest.approx(0.875, abs=1e-6)


def test_verify_dual_regularity(capsys):
    assert main(["verify", "--check", "all", "--grid-points", "8"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["dual-regularity"]["passed"]
    assert len(result["dual-regularity"]["grid"]) == 8


def test_verify_rejects_nonconvex_problem():
    assert main(["verify", "--problem", "nonconvex-gaussian"]) == EXIT_USAGE


BENCH_CONFIG = QUADRATIC_CONFIG.replace('name = "scsa"', 'name = "scsa"\nalgorithms = [scsa, lbsgd]') + """
[budget]
max_oracle_calls = 20000

[run]
seeds = 2
jobs = 2
"""


def test_bench_writes_summary(tmp_path, capsys):
    config = _write(tmp_path, BENCH_CONFIG)
    out = tmp_path / "bench"
    assert main(["bench", "--config", config, "--out", str(out)]) == EXIT_OK

    with open(out / "summary.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0][:6] == ["algorithm", "seed", "outcome", "calls", "violations", "complexity_ratio"]
    assert len(rows[0]) == 6 + GAP_POINTS
    assert all(float(row[5]) > 0 for row in rows[1:])
    assert sorted((row[0], row[1]) for row in rows[1:]) == [
        ("lbsgd-simplified", "0"), ("lbsgd-simplified", "1"), ("scsa", "0"), ("scsa", "1")]
    assert all(row[4] == "0" for row in rows[1:])
    for algorithm in ("scsa", "lbsgd"):
        for seed in (0, 1):
            assert os.path.exists(out / algorithm / f"seed-{seed}" / "trace.json")
    assert "median best gap" in capsys.readouterr().out


def test_bench_without_seeds(tmp_path, capsys):
    config = _write(tmp_path, QUADRATIC_CONFIG)
    out = tmp_path / "empty"
    assert main(["bench", "--config", config, "--seeds", "0", "--out", str(out)]) == EXIT_OK
    with open(out / "summary.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 1
    assert "no seeds" in capsys.readouterr().err
