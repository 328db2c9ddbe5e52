"""Deterministic file output: atomic writes, schema-tagged CSV and JSON."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

TRAJECTORY_SCHEMA = "qcsb-trajectory/1"
SUMMARY_SCHEMA = "qcsb-summary/1"
SWEEP_SCHEMA = "qcsb-sweep/1"
RSGRID_SCHEMA = "qcsb-rsgrid/1"
BOUNDARY_SCHEMA = "qcsb-boundary/1"
VALIDATION_SCHEMA = "qcsb-validation/1"


class SchemaMismatch(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value, digits):
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if digits is None:
        return repr(v)
    return f"{v:.{digits}g}"


def csv_text(schema: str, columns: dict, digits=None) -> str:
    """CSV with a ``# schema: ...`` first line and a fixed column order.

    ``digits`` significant digits, or the shortest round-trip form when None.
    """
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    cols = [columns[k] for k in names]
    for i in range(n):
        w.writerow([_fmt(c[i], digits) for c in cols])
    return buf.getvalue()


def write_csv(path, schema: str, columns: dict, digits=None) -> None:
    atomic_write_text(path, csv_text(schema, columns, digits))


def read_csv(path, schema: str) -> dict:
    """Read a schema-tagged CSV back into float (or str) columns; wrong schema raises."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        found = first[len("# schema:"):].strip() if first.startswith("# schema:") else None
        if found != schema:
            raise SchemaMismatch(f"{path}: expected schema {schema!r}, found {found!r}")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = vals
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(schema: str, payload: dict) -> str:
    data = {"schema": schema}
    data.update(_jsonable(payload))
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(path, schema: str, payload: dict) -> None:
    atomic_write_text(path, json_text(schema, payload))


def read_json(path, schema: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema") != schema:
        raise SchemaMismatch(f"{path}: expected schema {schema!r}, found {data.get('schema')!r}")
    return data


def trajectory_csv_text(traj) -> str:
    return csv_text(TRAJECTORY_SCHEMA, traj.columns(), 15)


def write_trajectory(path, traj) -> None:
    atomic_write_text(path, trajectory_csv_text(traj))


def read_trajectory(path) -> dict:
    return read_csv(path, TRAJECTORY_SCHEMA)
