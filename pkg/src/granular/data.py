"""Tabular numeric datasets: loading, z-score standardization, CSV round-trip."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from granular.errors import DataError

logger = logging.getLogger(__name__)

# Columns whose population stddev falls below this are treated as constant.
STD_EPS = 1e-12


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """An n x d matrix of finite float64 values with named columns and row ids."""

    columns: tuple[str, ...]
    values: np.ndarray
    ids: tuple[Hashable, ...]

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DataError(f"expected a 2-D matrix, got shape {values.shape}")
        n, d = values.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset must have n >= 1 and d >= 1, got {values.shape}")
        if len(self.columns) != d:
            raise DataError(f"{len(self.columns)} column names for {d} columns")
        if len(set(self.columns)) != d:
            raise DataError("column names must be unique")
        if len(self.ids) != n:
            raise DataError(f"{len(self.ids)} ids for {n} rows")
        if len(set(self.ids)) != n:
            raise DataError("row ids must be unique")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset contains non-finite values")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def row_index(self) -> dict[Hashable, int]:
        return {id_: i for i, id_ in enumerate(self.ids)}

    def with_values(self, values: np.ndarray) -> Dataset:
        return Dataset(self.columns, values, self.ids)

    @classmethod
    def from_array(
        cls,
        values: np.ndarray,
        columns: Sequence[str] | None = None,
        ids: Sequence[Hashable] | None = None,
    ) -> Dataset:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        n, d = values.shape
        if columns is None:
            columns = [f"x{j + 1}" for j in range(d)]
        if ids is None:
            ids = range(n)
        return cls(tuple(columns), values, tuple(ids))


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column mean and population stddev; constant columns get stddev 1."""

    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    constant: tuple[bool, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "std", _frozen(self.std))
        if not self.constant:
            object.__setattr__(self, "constant", (False,) * len(self.columns))
        if np.any(self.std < STD_EPS):
            raise DataError("standardization stddev must be >= eps")

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": list(self.constant),
        }


def _parse_id(raw: list[str]) -> list[Hashable]:
    try:
        return [int(v) for v in raw]
    except ValueError:
        return list(raw)


def load_csv(path: str | Path, id_column: str | None = None) -> Dataset:
    """Read a header-first CSV of numeric columns.

    Ids come from ``id_column`` when given (integers if every value parses as
    one), otherwise the 0-based row index. Rows keep file order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if id_column is not None and id_column not in header:
            raise DataError(f"{path}: id column {id_column!r} not in header")
        id_pos = header.index(id_column) if id_column is not None else None
        columns = [h for i, h in enumerate(header) if i != id_pos]
        raw_ids: list[str] = []
        rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            values = []
            for i, cell in enumerate(row):
                if i == id_pos:
                    raw_ids.append(cell.strip())
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {row_no}, column {header[i]!r}: "
                        f"cannot parse {cell!r} as a finite number"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    ids = _parse_id(raw_ids) if id_pos is not None else list(range(len(rows)))
    if len(set(ids)) != len(ids):
        seen: set = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DataError(f"{path}: duplicate id {dup!r}")
    return Dataset(tuple(columns), np.array(rows, dtype=np.float64), tuple(ids))


def write_csv(data: Dataset, path: str | Path, id_column: str = "id") -> None:
    """Write ``data`` so that ``load_csv(path, id_column)`` reproduces it exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([id_column, *data.columns])
        for id_, row in zip(data.ids, data.values):
            writer.writerow([id_, *(format(v, ".17g") for v in row)])


def fit_standardizer(data: Dataset) -> StandardizationParams:
    if data.n < 2:
        raise DataError(f"need at least 2 rows to fit a standardizer, got {data.n}")
    mean = data.values.mean(axis=0)
    std = data.values.std(axis=0)  # population (1/n)
    constant = std < STD_EPS
    for name, flag in zip(data.columns, constant):
        if flag:
            logger.warning("column %r is constant; stddev set to 1", name)
    std = np.where(constant, 1.0, std)
    return StandardizationParams(data.columns, mean, std, tuple(bool(c) for c in constant))


def _check_columns(data: Dataset, params: StandardizationParams) -> None:
    if data.d != len(params.columns):
        raise DataError(
            f"dimension mismatch: data has {data.d} columns, params have {len(params.columns)}"
        )


def standardize(data: Dataset, params: StandardizationParams) -> Dataset:
    _check_columns(data, params)
    return data.with_values((data.values - params.mean) / params.std)


def destandardize(data: Dataset, params: StandardizationParams) -> Dataset:
    _check_columns(data, params)
    return data.with_values(data.values * params.std + params.mean)
