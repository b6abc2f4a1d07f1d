"""Series containers, CSV ingestion and the holdout split protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input files or datasets violating length rules."""


@dataclass(frozen=True)
class TimeSeries:
    id: str
    values: np.ndarray
    seasonal_period: int = 1
    group: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.seasonal_period < 1:
            raise DatasetError(f"seasonal_period must be positive, got {self.seasonal_period}")
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"series {self.id!r} contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Dataset:
    series: tuple[TimeSeries, ...]
    horizon: int
    name: str = "dataset"
    labels: dict[str, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        if self.horizon < 1:
            raise DatasetError(f"horizon must be positive, got {self.horizon}")
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise DatasetError("series ids must be unique")
        short = [s.id for s in self.series if len(s) <= 2 * self.horizon]
        if short:
            raise DatasetError(
                f"series shorter than 2*horizon+1={2 * self.horizon + 1}: {', '.join(short)}"
            )

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.series]

    @property
    def seasonal_period(self) -> int:
        return self.series[0].seasonal_period if self.series else 1

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, series_id: str) -> TimeSeries:
        for s in self.series:
            if s.id == series_id:
                return s
        raise KeyError(series_id)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        wanted = set(ids)
        labels = None
        if self.labels is not None:
            labels = {k: v for k, v in self.labels.items() if k in wanted}
        return Dataset(
            tuple(s for s in self.series if s.id in wanted), self.horizon, self.name, labels
        )

    def truncate(self) -> "Dataset":
        """Drop the final ``horizon`` points of every series.

        The truncated dataset's test part is the original validation part,
        which lets any variant be scored on the validation holdout.
        """
        return Dataset(
            tuple(
                TimeSeries(s.id, s.values[: -self.horizon], s.seasonal_period, s.group)
                for s in self.series
            ),
            self.horizon,
            self.name,
            self.labels,
        )


@dataclass(frozen=True)
class SplitSeries:
    id: str
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def _impute(cells: list[str], imputation: str) -> list[float]:
    out: list[float] = []
    last = 0.0
    for cell in cells:
        if cell == "":
            out.append(last if imputation == "locf" else 0.0)
        else:
            last = float(cell)
            out.append(last)
    return out


def load_dataset(
    path: str | Path,
    horizon: int,
    seasonal_period: int,
    imputation: str = "zero",
    group_column: str | None = None,
    name: str | None = None,
) -> Dataset:
    """Read a long-format ``series_id,value`` CSV into a :class:`Dataset`.

    Rows keep their file order within each id. Empty value cells are imputed
    with zero (default) or the last observed value (``imputation="locf"``).
    Extra columns are ignored unless named by ``group_column``.
    """
    if imputation not in ("zero", "locf"):
        raise ValueError(f"unknown imputation {imputation!r}")
    path = Path(path)
    cells: dict[str, list[str]] = {}
    groups: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["series_id", "value"]:
            raise DatasetError(f"{path}: row 1: expected header 'series_id,value', got {header}")
        group_idx = None
        if group_column is not None:
            stripped = [h.strip() for h in header]
            if group_column not in stripped:
                raise DatasetError(f"{path}: group column {group_column!r} not in header")
            group_idx = stripped.index(group_column)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise DatasetError(f"{path}: row {row_no}: expected at least 2 fields")
            sid, raw = row[0].strip(), row[1].strip()
            if raw != "":
                try:
                    val = float(raw)
                except ValueError:
                    raise DatasetError(
                        f"{path}: row {row_no}: non-numeric value {raw!r}"
                    ) from None
                if not math.isfinite(val):
                    raise DatasetError(f"{path}: row {row_no}: non-finite value {raw!r}")
            cells.setdefault(sid, []).append(raw)
            if group_idx is not None:
                groups.setdefault(sid, row[group_idx].strip() if group_idx < len(row) else "")
    series = tuple(
        TimeSeries(sid, np.array(_impute(c, imputation)), seasonal_period, groups.get(sid))
        for sid, c in cells.items()
    )
    return Dataset(series, horizon, name or path.stem)


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as long-format CSV; floats use ``repr`` so reloads are exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        with_group = any(s.group is not None for s in ds.series)
        writer.writerow(["series_id", "value", "group"] if with_group else ["series_id", "value"])
        for s in ds.series:
            for v in s.values:
                row = [s.id, repr(float(v))]
                if with_group:
                    row.append(s.group or "")
                writer.writerow(row)


def split_for_validation(ds: Dataset) -> list[SplitSeries]:
    h = ds.horizon
    empty = np.empty(0)
    return [SplitSeries(s.id, s.values[:-h], s.values[-h:], empty) for s in ds.series]


def split_for_test(ds: Dataset) -> list[SplitSeries]:
    h = ds.horizon
    empty = np.empty(0)
    return [SplitSeries(s.id, s.values[:-h], empty, s.values[-h:]) for s in ds.series]


def training_histories(ds: Dataset, splits: Sequence[SplitSeries] | None = None) -> dict[str, np.ndarray]:
    splits = split_for_test(ds) if splits is None else splits
    return {sp.id: sp.train for sp in splits}
