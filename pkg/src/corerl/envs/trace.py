"""CSV workload traces (e.g. a cluster-trace export) turned into task requests.

CPU and RAM columns are divided by their column maximum so they land in
(0, 1]. Durations are kept in simulator time units: ``ceil(value * t_scale)``.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .oran import TaskRequest

DEFAULT_COLUMNS = {"c_req": "cpu", "r_req": "mem", "t_occ": "duration"}


class TraceError(ValueError):
    pass


def load_workload_trace(path, column_map: dict | None = None, t_scale: float = 1.0) -> list[TaskRequest]:
    column_map = {**DEFAULT_COLUMNS, **(column_map or {})}
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise TraceError(f"{path}: missing header row")
        missing = [c for c in column_map.values() if c not in reader.fieldnames]
        if missing:
            raise TraceError(f"{path}: missing column(s) {missing}; header has {reader.fieldnames}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            vals = {}
            for key, col in column_map.items():
                try:
                    vals[key] = float(row[col])
                except (TypeError, ValueError):
                    raise TraceError(f"{path}: row {row_no}: non-numeric {col!r} value {row[col]!r}") from None
                if not math.isfinite(vals[key]) or vals[key] <= 0:
                    raise TraceError(f"{path}: row {row_no}: {col!r} must be positive, got {row[col]!r}")
            rows.append(vals)
    if not rows:
        return []
    c_max = max(r["c_req"] for r in rows)
    r_max = max(r["r_req"] for r in rows)
    return [TaskRequest(r["c_req"] / c_max, r["r_req"] / r_max, max(1, math.ceil(r["t_occ"] * t_scale)))
            for r in rows]
