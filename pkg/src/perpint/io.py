"""CSV tables and run manifests."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import platform
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RunManifest",
    "format_value",
    "manifest_path_for",
    "trajectory_rows",
    "write_csv",
    "write_trajectory_csv",
]


def format_value(v) -> str:
    """Deterministic text for a CSV cell: shortest round-trip repr for floats."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Comma-separated, LF line endings, header row first."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} cells, header has {len(columns)}")
            w.writerow([format_value(v) for v in row])
    return path


def trajectory_rows(traj):
    """Columns and rows for a recorded path: t, state components, integrals, absorbed flag."""
    states = np.asarray(traj.states)
    if states.ndim == 1:
        states = states[:, None]
    names = list(traj.integrals)
    columns = ["t", *traj.columns, *(f"int[{n}]" for n in names), "absorbed"]
    n = len(traj.times)
    absorbed = np.zeros(n, dtype=bool)
    if traj.absorbed_at is not None:
        absorbed[-1] = True
    rows = []
    for k in range(n):
        rows.append(
            (traj.times[k], *states[k], *(traj.integrals[name][k] for name in names), absorbed[k])
        )
    return columns, rows


def write_trajectory_csv(path, traj) -> Path:
    columns, rows = trajectory_rows(traj)
    return write_csv(path, columns, rows)


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else format_value(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return str(obj)


@dataclass
class RunManifest:
    """Provenance record written next to every data file.

    It is written with ``status='incomplete'`` before any data and
    rewritten with ``status='complete'`` at the end, so an interrupted
    run is recognisable.
    """

    subcommand: str
    config: dict
    seed: int
    version: str
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    status: str = "incomplete"
    started: str = ""
    wall_clock_seconds: float = 0.0
    python: str = field(default_factory=platform.python_version)

    def __post_init__(self):
        if not self.started:
            self.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")

    def write(self, path) -> Path:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def manifest_path_for(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")
