"""Reader for the simulation CSV artifacts.

The files are plain CSV with one JSON header line (prefixed ``# ``) that
carries column descriptions and run metadata, then a column-name row, then
data rows at full decimal precision.  This module re-implements the small
amount of parsing needed so the figure package has no dependency on the
simulation package; the format is the contract, not the code.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_KNOWN_SCHEMAS = ("roughsim-timeseries-1", "roughsim-scan-1")


class FigureDataError(Exception):
    """Base class for everything this package refuses to plot."""


class MissingInputError(FigureDataError):
    pass


class SchemaError(FigureDataError):
    pass


class EmptyDataError(FigureDataError):
    pass


@dataclass
class Table:
    """One parsed artifact: named float columns plus the header metadata."""

    path: Path
    schema: str
    meta: dict
    columns: dict[str, np.ndarray] = field(repr=False)

    @property
    def n_rows(self) -> int:
        first = next(iter(self.columns.values()))
        return int(first.size)

    def require(self, *names: str) -> tuple[np.ndarray, ...]:
        """Return the named columns, failing loudly if any are absent."""
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(
                f"{self.path.name}: missing column(s) {', '.join(missing)}; "
                f"file has {', '.join(self.columns)}"
            )
        if self.n_rows == 0:
            raise EmptyDataError(f"{self.path.name}: no data rows")
        return tuple(self.columns[n] for n in names)

    def meta_value(self, key: str):
        try:
            return self.meta[key]
        except KeyError:
            raise SchemaError(
                f"{self.path.name}: header metadata has no key {key!r}"
            ) from None

    def blocks(self, name: str):
        """Yield (value, row mask) for each distinct value of a column, ascending."""
        (col,) = self.require(name)
        for value in np.unique(col):
            yield float(value), col == value


def read_table(path: Path | str) -> Table:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"input CSV not found: {path}")
    text = path.read_text()
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith("# "):
        raise SchemaError(f"{path.name}: expected a '# ' JSON header line")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: header line is not valid JSON: {exc}")
    schema = header.get("schema")
    if schema not in _KNOWN_SCHEMAS:
        raise SchemaError(f"{path.name}: unknown schema tag {schema!r}")
    names = lines[1].split(",")
    body = "\n".join(lines[2:]).strip()
    if body:
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        if data.shape[1] != len(names):
            raise SchemaError(
                f"{path.name}: {data.shape[1]} data columns vs "
                f"{len(names)} header names"
            )
    else:
        data = np.zeros((0, len(names)))
    columns = {n: np.ascontiguousarray(data[:, i]) for i, n in enumerate(names)}
    return Table(
        path=path,
        schema=schema,
        meta=header.get("meta", {}),
        columns=columns,
    )
