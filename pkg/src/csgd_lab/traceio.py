"""Trace serialization: byte-stable CSV plus a JSON metadata sidecar.

The CSV holds only the column header and data rows so the schema line is
the first line of the file; run metadata (enough to reproduce the run)
lives next to it in ``<name>.meta.json``.  Reals print with 17 significant
digits, which round-trips 64-bit floats exactly, and nothing
time-dependent is written, so identical runs serialize to identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .optimizers import RunTrace, _INT_COLUMNS


def format_value(column: str, value) -> str:
    if column in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def trace_csv_text(trace: RunTrace) -> str:
    lines = [",".join(trace.columns)]
    for row in trace.rows:
        lines.append(",".join(format_value(c, v) for c, v in zip(trace.columns, row)))
    return "\n".join(lines) + "\n"


def write_trace(trace: RunTrace, csv_path: Path) -> None:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(trace_csv_text(trace))
    meta = {
        "header": trace.header,
        "status": trace.status,
        "halt_reason": trace.halt_reason,
        "identity_residual_max": trace.identity_residual_max,
        "rows": len(trace),
    }
    meta_path = csv_path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_trace_csv(csv_path: Path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as arrays keyed by name."""
    lines = Path(csv_path).read_text().strip("\n").split("\n")
    names = lines[0].split(",")
    raw = [line.split(",") for line in lines[1:]]
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(names):
        if name in _INT_COLUMNS:
            out[name] = np.array([int(row[j]) for row in raw], dtype=np.int64)
        else:
            out[name] = np.array([float(row[j]) for row in raw], dtype=np.float64)
    return out


def aggregate_csv_text(traces: list[RunTrace]) -> str:
    """Per-iteration arithmetic means across seeds.

    Rows stop at the longest trace; each mean averages over the seeds that
    still have a record at that iteration (runs that halted early stop
    contributing).
    """
    if not traces:
        raise InvalidSpecError("need at least one trace to aggregate")
    columns = traces[0].columns
    for trace in traces:
        if trace.columns != columns:
            raise InvalidSpecError("traces with different schemas cannot be aggregated")
    lengths = [len(trace) for trace in traces]
    lines = [",".join(columns)]
    data = [np.array([list(map(float, row)) for row in trace.rows]) for trace in traces]
    for t in range(max(lengths)):
        stacked = np.array([d[t] for d, size in zip(data, lengths) if t < size])
        mean = stacked.mean(axis=0)
        cells = []
        for name, value in zip(columns, mean):
            if name == "t":
                cells.append(str(t))
            else:
                # means of counts are reals, so every non-index column prints as one
                cells.append(format(float(value), ".17g"))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
