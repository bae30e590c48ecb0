"""CSV and JSON persistence with byte-stable formatting."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..loewner import DrivingPath

DRIVER_COLUMNS = ("id", "t", "xi")
FLOW_COLUMNS = ("id", "t", "m", "a_m")


class IOFormatError(ValueError):
    pass


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path, columns):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd, None)
        if head is None or tuple(head) != tuple(columns):
            raise IOFormatError(f"{path}: expected columns {','.join(columns)}, got {head}")
        return [row for row in rd if row]


def write_drivers(path, runs):
    """runs: iterable of (id, DrivingPath)."""
    rows = []
    for rid, p in runs:
        rows.extend((int(rid), float(t), float(x)) for t, x in zip(p.t, p.xi))
    write_csv(path, DRIVER_COLUMNS, rows)


def read_drivers(path, geometry="chordal") -> dict:
    """{id: DrivingPath} in file order of first appearance."""
    ts, xs = defaultdict(list), defaultdict(list)
    for row in read_csv(path, DRIVER_COLUMNS):
        try:
            rid, t, x = int(row[0]), float(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise IOFormatError(f"{path}: bad row {row}") from exc
        ts[rid].append(t)
        xs[rid].append(x)
    return {rid: DrivingPath(np.array(ts[rid]), np.array(xs[rid]), geometry) for rid in ts}


def write_flows(path, rows):
    write_csv(path, FLOW_COLUMNS, rows)


def read_flows(path) -> list:
    return [(int(r[0]), float(r[1]), int(r[2]), float(r[3])) for r in read_csv(path, FLOW_COLUMNS)]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_curves(path, records):
    """curves.json: list of {id, points: [[x, y], ...]} plus the end mark index when known."""
    out = []
    for r in records:
        d = {"id": int(r["id"]), "points": [[float(x), float(y)] for x, y in r["points"]]}
        if "end" in r:
            d["end"] = int(r["end"])
        out.append(d)
    write_json(path, out)


def read_curves(path) -> list:
    data = read_json(path)
    if not isinstance(data, list):
        raise IOFormatError(f"{path}: expected a list of curves")
    for c in data:
        if "id" not in c or "points" not in c:
            raise IOFormatError(f"{path}: each curve needs id and points")
    return data
