"""Tabular data: column schemas, CSV ingestion, train/test splits and synthetic data sets."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyData, ParseError, UnknownCategory


class Kind(str, Enum):
    NUMERIC = "numeric"
    SYMBOLIC = "symbolic"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: Kind
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind is Kind.NUMERIC and self.categories:
            raise ValueError(f"numeric column {self.name!r} cannot carry categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"duplicate categories in column {self.name!r}")

    @property
    def is_numeric(self) -> bool:
        return self.kind is Kind.NUMERIC

    def code(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise UnknownCategory(f"unknown category {label!r}", column=self.name) from None

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind.value}
        if not self.is_numeric:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        return cls(d["name"], Kind(d["kind"]), tuple(d.get("categories", ())))


@dataclass(frozen=True)
class Dataset:
    """An immutable n x m table.

    Numeric cells hold finite reals; symbolic cells hold the integer code of
    their category (stored as float so that rows stay homogeneous arrays).
    """

    columns: tuple[ColumnSpec, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        columns = tuple(self.columns)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise ValueError(f"values of shape {values.shape} do not match {len(columns)} columns")
        if values.shape[0] < 1:
            raise EmptyData("a dataset needs at least one row")
        for j, col in enumerate(columns):
            cells = values[:, j]
            if col.is_numeric:
                if not np.all(np.isfinite(cells)):
                    raise ValueError(f"non-finite value in numeric column {col.name!r}")
            else:
                ok = (cells >= 0) & (cells < len(col.categories)) & (cells == np.floor(cells))
                if not np.all(ok):
                    raise UnknownCategory("invalid category code", column=col.name)
        values.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_index(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if c.is_numeric], dtype=int)

    @property
    def symbolic_index(self) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if not c.is_numeric], dtype=int)

    def take(self, rows) -> "Dataset":
        return Dataset(self.columns, self.values[np.asarray(rows)])

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def labels(self, j: int) -> list[str]:
        """Decoded cell strings of column ``j``."""
        col = self.columns[j]
        if col.is_numeric:
            return [repr(float(v)) for v in self.values[:, j]]
        return [col.categories[int(v)] for v in self.values[:, j]]


def _parse_float(cell: str) -> Optional[float]:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def infer_columns(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[ColumnSpec]:
    """A column is numeric iff every cell parses as a finite real."""
    specs = []
    for j, name in enumerate(header):
        cells = [r[j] for r in rows]
        if all(_parse_float(c) is not None for c in cells):
            specs.append(ColumnSpec(name, Kind.NUMERIC))
        else:
            specs.append(ColumnSpec(name, Kind.SYMBOLIC, tuple(sorted(set(cells)))))
    return specs


def encode_rows(columns: Sequence[ColumnSpec], rows: Sequence[Sequence[str]]) -> np.ndarray:
    """Convert string rows to the numeric cell encoding of ``columns``.

    Row numbers in errors are 1-based and count data rows only.
    """
    out = np.empty((len(rows), len(columns)))
    for i, row in enumerate(rows):
        if len(row) != len(columns):
            raise ParseError(f"expected {len(columns)} cells, found {len(row)}", row=i + 1)
        for j, (col, cell) in enumerate(zip(columns, row)):
            if cell == "":
                raise ParseError("missing value", row=i + 1, column=col.name)
            if col.is_numeric:
                value = _parse_float(cell)
                if value is None:
                    raise ParseError(f"{cell!r} is not a finite number", row=i + 1, column=col.name)
                out[i, j] = value
            else:
                try:
                    out[i, j] = col.code(cell)
                except UnknownCategory as exc:
                    raise UnknownCategory(f"unknown category {cell!r}", row=i + 1, column=col.name) from exc
    return out


def load_schema(path) -> list[ColumnSpec]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return [ColumnSpec.from_dict(d) for d in doc["columns"]]


def save_schema(columns: Sequence[ColumnSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"columns": [c.to_dict() for c in columns]}, f, indent=2)


def load_csv(path, spec: Optional[Sequence[ColumnSpec]] = None) -> Dataset:
    """Read a comma separated file with a header row.

    Without ``spec`` the column kinds are inferred and the categories of a
    symbolic column are its sorted distinct strings.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path}: no header row") from None
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyData(f"{path}: no data rows")
    if spec is None:
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", row=i + 1)
            for name, cell in zip(header, row):
                if cell == "":
                    raise ParseError("missing value", row=i + 1, column=name)
        columns = infer_columns(header, rows)
    else:
        columns = list(spec)
        if [c.name for c in columns] != header:
            raise ParseError(f"header {header} does not match schema {[c.name for c in columns]}")
    return Dataset(tuple(columns), encode_rows(columns, rows))


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(data.names)
        decoded = [data.labels(j) for j in range(data.m)]
        writer.writerows(zip(*decoded))


def split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test partition; the test set has round(n * test_fraction) rows, clamped to [1, n-1]."""
    if data.n < 2:
        raise ValueError("splitting needs at least two rows")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(math.floor(data.n * test_fraction + 0.5))
    n_test = min(max(n_test, 1), data.n - 1)
    perm = np.random.default_rng(seed).permutation(data.n)
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return data.take(train_rows), data.take(test_rows)


def _numeric_dataset(names: Sequence[str], values: np.ndarray) -> Dataset:
    return Dataset(tuple(ColumnSpec(n, Kind.NUMERIC) for n in names), values)


def synth_robot_grab(n: int, object_range: float = 10.0, seed: int = 0) -> Dataset:
    """Object positions uniform on the square [0, object_range)^2, robot offset U(0,1) up and right."""
    if n < 1 or object_range <= 0:
        raise ValueError("need n >= 1 and object_range > 0")
    rng = np.random.default_rng(seed)
    obj = rng.uniform(0.0, object_range, size=(n, 2))
    rob = obj + rng.uniform(0.0, 1.0, size=(n, 2))
    return _numeric_dataset(["x_obj", "y_obj", "x_rob", "y_rob"], np.hstack([obj, rob]))


# Independent cluster on [0, 2]^2; dependent cluster y = 2x - 0.5 + U(0, 0.5) for x in [3, 5].
TWO_UNIFORMS_SLOPE = 2.0
TWO_UNIFORMS_INTERCEPT = -0.5
TWO_UNIFORMS_NOISE = 0.5


def synth_two_uniforms(n: int, seed: int = 0, return_labels: bool = False):
    """Two separated 2D clusters: an axis-aligned uniform square and a sheared uniform band.

    The first ``n // 2`` rows belong to the square (label 0), the rest to the band (label 1).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    square = rng.uniform(0.0, 2.0, size=(n0, 2))
    x = rng.uniform(3.0, 5.0, size=n1)
    y = TWO_UNIFORMS_SLOPE * x + TWO_UNIFORMS_INTERCEPT + rng.uniform(0.0, TWO_UNIFORMS_NOISE, size=n1)
    values = np.vstack([square, np.column_stack([x, y])])
    data = _numeric_dataset(["x", "y"], values)
    if return_labels:
        return data, np.repeat([0, 1], [n0, n1])
    return data


THREE_GAUSSIANS_MEANS = np.array([[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]])
THREE_GAUSSIANS_COVS = np.array(
    [
        [[1.0, 0.6], [0.6, 1.0]],
        [[1.5, -0.7], [-0.7, 0.8]],
        [[0.6, 0.2], [0.2, 2.0]],
    ]
)


def synth_three_gaussians(n: int, seed: int = 0, return_labels: bool = False):
    """Equal-weight mixture of three correlated 2D Gaussians (component sizes differ by at most one)."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    sizes = [n // 3 + (1 if k < n % 3 else 0) for k in range(3)]
    blocks = [
        rng.multivariate_normal(mu, cov, size=size)
        for mu, cov, size in zip(THREE_GAUSSIANS_MEANS, THREE_GAUSSIANS_COVS, sizes)
    ]
    data = _numeric_dataset(["x", "y"], np.vstack(blocks))
    if return_labels:
        return data, np.repeat([0, 1, 2], sizes)
    return data
