"""
SafePD Trace Manager Module

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

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from oracle import LedgerRecord, QueryLedger

SCHEMA_VERSION = "1.0"

logger = logging.getLogger("safepd.trace")


class TraceFormatError(ValueError):
    """Exception raised when a saved trace or ledger cannot be read."""
    pass


@dataclass
class RunTrace:
    """Everything a run leaves behind: per-iteration records, outcome and diagnostics."""

    run_id: str = ""
    config: Dict[str, Any] = field(default_factory=dict)
    records: List[Any] = field(default_factory=list)
    rounds: List[Any] = field(default_factory=list)
    final_kkt: Optional[Any] = None
    outcome: str = "Running"
    total_calls: int = 0
    x_final: Optional[np.ndarray] = None
    lambda_final: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "config": to_jsonable(self.config),
            "records": [to_jsonable(r) for r in self.records],
            "rounds": [to_jsonable(r) for r in self.rounds],
            "final_kkt": to_jsonable(self.final_kkt),
            "outcome": self.outcome,
            "total_calls": int(self.total_calls),
            "x_final": to_jsonable(self.x_final),
            "lambda_final": to_jsonable(self.lambda_final),
            "diagnostics": to_jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunTrace":
        x_final = data.get("x_final")
        return cls(
            run_id=data.get("run_id", ""),
            config=data.get("config", {}),
            records=list(data.get("records", [])),
            rounds=list(data.get("rounds", [])),
            final_kkt=data.get("final_kkt"),
            outcome=data.get("outcome", "Running"),
            total_calls=int(data.get("total_calls", 0)),
            x_final=np.array(x_final) if x_final is not None else None,
            lambda_final=data.get("lambda_final"),
            diagnostics=data.get("diagnostics", {}),
        )


def record_field(record: Any, name: str, default: Any = None) -> Any:
    """Read a field from a record that is either a dataclass or a loaded dict."""
    if isinstance(record, dict):
        return record.get(name, default)
    return getattr(record, name, default)


def to_jsonable(obj: Any) -> Any:
    """Convert dataclasses, numpy values and enums into plain JSON types."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)


def dumps_trace(trace: RunTrace) -> str:
    """Serialize deterministically: sorted keys, fixed indentation, no timestamps."""
    return json.dumps(trace.to_dict(), sort_keys=True, indent=2) + "\n"


class TraceStore:
    """Saves and restores run traces and query ledgers under an output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def save_trace(self, trace: RunTrace, name: str = "trace.json") -> str:
        """Write the trace JSON and return its path."""
        os.makedirs(self.out_dir, exist_ok=True)
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(dumps_trace(trace))
        return path

    def save_ledger(self, ledger: QueryLedger, dim: int, name: str = "ledger.csv") -> str:
        """Write the ledger CSV and return its path."""
        os.makedirs(self.out_dir, exist_ok=True)
        path = self._path(name)
        write_ledger_csv(ledger, dim, path)
        return path


def load_trace(path: str) -> RunTrace:
    """Read a trace JSON written by ``TraceStore.save_trace``."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if os.path.getsize(path) == 0:
        raise TraceFormatError(f"Trace file is empty: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Trace file corrupted: {e}")
        raise TraceFormatError(f"Trace file corrupted: {path}") from e

    if data.get("schema_version") != SCHEMA_VERSION:
        raise TraceFormatError(f"Incompatible trace schema version: {data.get('schema_version')}")
    return RunTrace.from_dict(data)


def write_ledger_csv(ledger: QueryLedger, dim: int, path: str):
    """Columns: query_index, x_0..x_{d-1}, n_samples, ball; the run id goes in a comment line."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# run_id={ledger.run_id}\n")
        writer = csv.writer(f)
        writer.writerow(["query_index"] + [f"x_{i}" for i in range(dim)] + ["n_samples", "ball"])
        for record in ledger:
            writer.writerow([record.query_index] + [repr(float(v)) for v in record.x]
                            + [record.samples_drawn, record.ball])


def read_ledger_csv(path: str) -> QueryLedger:
    """Rebuild a ledger from its CSV export."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ledger = QueryLedger()
    with open(path, "r", newline="", encoding="utf-8") as f:
        first = f.readline()
        if first.startswith("# run_id="):
            ledger.run_id = first.strip()[len("# run_id="):]
        else:
            f.seek(0)
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            return ledger
        if header[0] != "query_index" or header[-2:] != ["n_samples", "ball"]:
            raise TraceFormatError(f"Unexpected ledger header: {header}")
        for row in reader:
            if not row:
                continue
            x = np.array([float(v) for v in row[1:-2]])
            record = LedgerRecord(int(row[0]), x, int(row[-2]), int(row[-1]))
            ledger.records.append(record)
            ledger.total = record.query_index + record.samples_drawn
    return ledger
