"""CSV datasets and JSON reports.

Floats are written with 17 significant digits so 64-bit values survive a
write/read round trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyFile, MissingColumn, NonNumericCell

ROLES = ("covariate", "treatment", "response", "ps_mean", "ps_var")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return "" if v is None else str(v)


def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_columns(path, columns: dict) -> None:
    """Write equal-length named columns."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    write_table(path, names, zip(*arrays))


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    return [h.strip() for h in rows[0]], rows[1:]


def read_numeric(path, columns: Optional[Sequence[str]] = None) -> dict:
    """Named float columns from a header-row CSV (all columns by default).

    Raises MissingColumn for absent names and NonNumericCell with the
    1-based data row and column name of the first unparsable cell.
    """
    header, body = read_table(path)
    wanted = list(header) if columns is None else list(columns)
    for name in wanted:
        if name not in header:
            raise MissingColumn(f"column {name!r} not found in {path}")
    out = {}
    for name in wanted:
        j = header.index(name)
        vals = np.empty(len(body))
        for i, row in enumerate(body):
            cell = row[j].strip() if j < len(row) else ""
            try:
                vals[i] = float(cell)
            except ValueError:
                raise NonNumericCell(f"row {i + 1}, column {name!r}: {cell!r} is not a number") from None
        out[name] = vals
    return out


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for a dataset CSV."""

    covariates: tuple
    treatment: str = "t"
    response: Optional[str] = "y"
    ps_mean: Optional[str] = None
    ps_var: Optional[str] = None

    def __post_init__(self):
        named = [c for c in (*self.covariates, self.treatment, self.response, self.ps_mean, self.ps_var)
                 if c is not None]
        if len(named) != len(set(named)):
            raise ValueError("a column may carry only one role")

    def columns(self) -> list[str]:
        return [c for c in (*self.covariates, self.treatment, self.response, self.ps_mean, self.ps_var)
                if c is not None]


@dataclass
class Dataset:
    X: np.ndarray
    t: np.ndarray
    y: Optional[np.ndarray]
    ps_mean: Optional[np.ndarray] = None
    ps_var: Optional[np.ndarray] = None
    covariate_names: tuple = ()

    @property
    def n(self) -> int:
        return len(self.t)


def infer_schema(path, treatment: str = "t", response: Optional[str] = "y") -> DatasetSchema:
    """Covariates are the ``x_*`` columns, in file order."""
    header, _ = read_table(path)
    cov = tuple(h for h in header if h.startswith("x_"))
    return DatasetSchema(cov, treatment, response)


def read_dataset(path, schema: Optional[DatasetSchema] = None) -> Dataset:
    if schema is None:
        schema = infer_schema(path)
    cols = read_numeric(path, schema.columns())
    n = len(cols[schema.treatment])
    X = (np.column_stack([cols[c] for c in schema.covariates]) if schema.covariates
         else np.empty((n, 0)))
    return Dataset(X, cols[schema.treatment],
                   cols[schema.response] if schema.response else None,
                   cols[schema.ps_mean] if schema.ps_mean else None,
                   cols[schema.ps_var] if schema.ps_var else None,
                   tuple(schema.covariates))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(p.suffix + ".json")
