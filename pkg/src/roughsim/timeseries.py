"""Run records: time series containers, CSV persistence, run manifests.

CSV layout: one comment line holding a JSON header (schema id, column
units, run metadata), then a plain header row and %.17g-formatted data so
reruns are bit-identical and diffs are meaningful.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import TruncationSpec

SCHEMA_TIMESERIES = "roughsim-timeseries-1"
SCHEMA_MANIFEST = "roughsim-manifest-1"
SCHEMA_SCAN = "roughsim-scan-1"


@dataclass(frozen=True)
class EvolutionConfig:
    """Settings shared by the network and exact evolution drivers."""

    dt: float = 0.1
    t_max: float = 10.0
    krylov_m_max: int = 30
    krylov_tol: float = 1e-12
    stride: int = 1
    truncation: TruncationSpec = field(default_factory=lambda: TruncationSpec(chi_max=64))

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def time_grid(self) -> np.ndarray:
        """Measurement times: 0 and every stride-th step boundary."""
        steps = np.arange(0, self.n_steps + 1)
        keep = (steps % self.stride == 0) | (steps == self.n_steps)
        return steps[keep] * self.dt


class TimeSeries:
    """Named columns over a strictly increasing time grid, plus metadata."""

    def __init__(self, times, columns: dict[str, np.ndarray], meta: dict | None = None):
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("times must be 1D")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.columns: dict[str, np.ndarray] = {}
        for name, col in columns.items():
            arr = np.asarray(col)
            if arr.shape != self.times.shape:
                raise ValueError(f"column {name!r} length {arr.shape} != times")
            self.columns[name] = arr
        self.meta = dict(meta or {})

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def names(self) -> list[str]:
        return list(self.columns)

    def with_column(self, name: str, values) -> "TimeSeries":
        cols = dict(self.columns)
        cols[name] = np.asarray(values)
        return TimeSeries(self.times, cols, self.meta)

    def to_csv(self, path):
        header = {
            "schema": SCHEMA_TIMESERIES,
            "columns": {"t": "time (1/J)", **{k: "" for k in self.columns}},
            "meta": _jsonable(self.meta),
        }
        names = ["t"] + list(self.columns)
        complex_cols = {
            k for k, v in self.columns.items() if np.iscomplexobj(v)
        }
        if complex_cols:
            raise ValueError(f"complex columns not supported in CSV: {complex_cols}")
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(",".join(names) + "\n")
            data = np.column_stack([self.times] + [self.columns[k] for k in self.columns])
            for row in data:
                fh.write(",".join(_fmt(x) for x in row) + "\n")

    @staticmethod
    def from_csv(path) -> "TimeSeries":
        with open(path) as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing JSON header line")
            header = json.loads(first[2:])
            if header.get("schema") != SCHEMA_TIMESERIES:
                raise ValueError(f"{path}: unexpected schema {header.get('schema')!r}")
            names = fh.readline().strip().split(",")
            body = fh.read().strip()
        if body:
            data = np.array(
                [[float(x) for x in line.split(",")] for line in body.splitlines()]
            )
        else:
            data = np.zeros((0, len(names)))
        if names[0] != "t":
            raise ValueError(f"{path}: first column must be t, got {names[0]!r}")
        cols = {name: data[:, i] for i, name in enumerate(names) if i > 0}
        return TimeSeries(data[:, 0], cols, header.get("meta", {}))


@dataclass
class ScanResult:
    """Flat per-point table of scan observables, CSV-backed like TimeSeries."""

    table: dict[str, np.ndarray]
    meta: dict

    def __getitem__(self, name: str) -> np.ndarray:
        return self.table[name]

    def rows(self, **fixed) -> dict[str, np.ndarray]:
        """View of the table restricted to exact matches on the given columns."""
        keep = np.ones(len(next(iter(self.table.values()))), dtype=bool)
        for name, value in fixed.items():
            keep &= self.table[name] == value
        return {k: v[keep] for k, v in self.table.items()}

    def to_csv(self, path):
        names = list(self.table)
        header = {
            "schema": SCHEMA_SCAN,
            "columns": names,
            "meta": _jsonable(self.meta),
        }
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(",".join(names) + "\n")
            data = np.column_stack(
                [np.asarray(self.table[k], dtype=float) for k in names]
            )
            for row in data:
                fh.write(",".join(_fmt(x) for x in row) + "\n")

    @staticmethod
    def from_csv(path) -> "ScanResult":
        with open(path) as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing JSON header line")
            header = json.loads(first[2:])
            if header.get("schema") != SCHEMA_SCAN:
                raise ValueError(f"{path}: unexpected schema {header.get('schema')!r}")
            names = fh.readline().strip().split(",")
            body = fh.read().strip()
        rows = [[float(x) for x in line.split(",")] for line in body.splitlines()]
        data = np.array(rows) if rows else np.zeros((0, len(names)))
        return ScanResult(
            {name: data[:, i] for i, name in enumerate(names)},
            header.get("meta", {}),
        )


def _fmt(x: float) -> str:
    return "%.17g" % x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config_echo: dict, outputs: list[dict], failures=()):
    doc = {
        "schema": SCHEMA_MANIFEST,
        "config": _jsonable(config_echo),
        "outputs": outputs,
        "failures": list(failures),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != SCHEMA_MANIFEST:
        raise ValueError(f"{path}: unexpected manifest schema")
    return doc
