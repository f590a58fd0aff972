import json

import numpy as np
import pytest

from oracle import QueryLedger
from scsa import DualState, KKTResidual, Outcome
from trace_manager import (SCHEMA_VERSION, RunTrace, TraceFormatError, TraceStore, dumps_trace,
                           load_trace, read_ledger_csv, record_field, to_jsonable)


def _trace():
    state = DualState(1, np.array([0.0, 0.5]), 4.5, -4.0, 0.004, 0.5, 0.25, 12, 4.48, 1, 12, 1, 0)
    return RunTrace(
        run_id="quadratic-d2-scsa-seed0",
        config={"eps_p": 0.05},
        records=[state],
        final_kkt=KKTResidual(0.01, 0.02, True, True),
        outcome=Outcome.CONVERGED.value,
        total_calls=12,
        x_final=np.array([0.0, 1.5]),
        lambda_final=0.875,
        diagnostics={"horizon_bound": np.int64(53091)},
    )


def test_to_jsonable_converts_numpy_and_enums():
    data = to_jsonable({"a": np.float64(1.5), "b": np.arange(2), "c": Outcome.BOUNDARY_STOP,
                        "d": (np.bool_(True), None)})
    assert data == {"a": 1.5, "b": [0, 1], "c": "BoundaryStop", "d": [True, None]}
    json.dumps(data)


def test_dumps_is_deterministic():
    text = dumps_trace(_trace())
    assert text == dumps_trace(_trace())
    assert text.endswith("}\n")
    data = json.loads(text)
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["records"][0]["x_t"] == [0.0, 0.5]
    assert data["final_kkt"]["comp_slack"] == 0.02


def test_store_round_trip(tmp_path):
    store = TraceStore(str(tmp_path / "run"))
    path = store.save_trace(_trace())
    loaded = load_trace(path)
    assert loaded.run_id == "quadratic-d2-scsa-seed0"
    assert loaded.outcome == "Converged"
    assert np.array_equal(loaded.x_final, [0.0, 1.5])
    assert record_field(loaded.records[0], "lambda_next") == 4.48
    assert loaded.diagnostics["horizon_bound"] == 53091


def test_load_rejects_bad_files(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text("{not json")
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"schema_version": "0.1"}))
    for path in (empty, corrupt, old):
        with pytest.raises(TraceFormatError):
            load_trace(str(path))
    with pytest.raises(FileNotFoundError):
        load_trace(str(tmp_path / "missing.json"))


def test_ledger_csv(tmp_path):
    ledger = QueryLedger("run-7")
    ledger.append(np.array([0.1, 1.0 / 3.0]), 5)
    ledger.ball = 2
    ledger.append(np.array([-0.25, 0.5]), 1)
    path = TraceStore(str(tmp_path)).save_ledger(ledger, 2)

    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "# run_id=run-7"
    assert lines[1] == "query_index,x_0,x_1,n_samples,ball"

    loaded = read_ledger_csv(path)
    assert loaded.run_id == "run-7"
    assert loaded.total == 6
    assert [r.ball for r in loaded] == [-1, 2]
    assert loaded.records[0].x[1] == 1.0 / 3.0


def test_ledger_csv_rejects_unknown_header(tmp_path):
    path = tmp_path / "ledger.csv"
    path.write_text("index,x\n0,1.0\n")
    with pytest.raises(TraceFormatError):
        read_ledger_csv(str(path))


def test_record_field_reads_dicts_and_dataclasses():
    state = _trace().records[0]
    assert record_field(state, "ball") == 0
    assert record_field({"ball": 3}, "ball") == 3
    assert record_field({}, "round", 1) == 1
