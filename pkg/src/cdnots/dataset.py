"""Loading, validation, and lag embedding of multivariate time series."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import TIME_NODE, LaggedNode


@dataclass(frozen=True)
class TimeSeriesDataset:
    """T x N matrix of observations with unique column names.

    ``max_lag`` is the lag horizon the dataset is meant to be analyzed at;
    it only drives the size validation (hard error when T <= max_lag + 2,
    warning when T < 3 * (max_lag + 1) * N).
    """

    values: np.ndarray
    names: tuple
    max_lag: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D matrix (rows = time, cols = variables)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        t, n = values.shape
        if len(self.names) != n:
            raise ValueError(f"{n} columns but {len(self.names)} names")
        if any(not name for name in self.names):
            raise ValueError("variable names must be non-empty")
        if len(set(self.names)) != n:
            dupes = sorted({m for m in self.names if self.names.count(m) > 1})
            raise ValueError(f"duplicate variable names: {', '.join(dupes)}")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise ValueError(f"non-finite value at row {r + 1}, column '{self.names[c]}'")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if t <= self.max_lag + 2:
            raise ValueError(f"need more than max_lag + 2 = {self.max_lag + 2} rows, got {t}")
        if t < 3 * (self.max_lag + 1) * n:
            warnings.warn(
                f"only {t} rows for {n} variables at lag {self.max_lag}; "
                f"estimates may be unstable below {3 * (self.max_lag + 1) * n} rows",
                stacklevel=2,
            )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


def load_csv(path, delimiter: str = ",", max_lag: int = 0) -> TimeSeriesDataset:
    """Read a headered CSV of finite reals. Parse problems are reported with
    their row and column location."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    lines = [line for line in lines if line != ""]
    if not lines:
        raise ValueError(f"{path}: empty file")
    names = [cell.strip() for cell in lines[0].split(delimiter)]
    rows = []
    for r, line in enumerate(lines[1:], start=1):
        cells = line.split(delimiter)
        if len(cells) != len(names):
            raise ValueError(
                f"{path}: row {r} has {len(cells)} cells, expected {len(names)}"
            )
        parsed = []
        for c, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: row {r}, column '{names[c]}': cannot parse {cell.strip()!r}"
                ) from None
            if not np.isfinite(value):
                raise ValueError(
                    f"{path}: row {r}, column '{names[c]}': non-finite value {cell.strip()!r}"
                )
            parsed.append(value)
        rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return TimeSeriesDataset(np.array(rows, dtype=float), tuple(names), max_lag=max_lag)


def save_csv(ds: TimeSeriesDataset, path, delimiter: str = ",") -> None:
    """Write the dataset back out; floats use shortest round-trip formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(ds.names) + "\n")
        for row in ds.values:
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")


def standardize(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Z-score every column with the population standard deviation."""
    mean = ds.values.mean(axis=0)
    sd = ds.values.std(axis=0)
    bad = np.where(sd <= 1e-12 * np.maximum(1.0, np.abs(mean)))[0]
    if bad.size:
        raise ValueError(f"column '{ds.names[bad[0]]}' is constant, cannot standardize")
    return TimeSeriesDataset((ds.values - mean) / sd, ds.names, max_lag=ds.max_lag)


def time_index_column(n_rows: int) -> np.ndarray:
    """The time covariate: row positions rescaled to [0, 1]."""
    if n_rows < 2:
        raise ValueError("need at least 2 rows for a time index")
    return np.linspace(0.0, 1.0, n_rows)


@dataclass
class LaggedDesignMatrix:
    """Column-per-(variable, lag) materialization of a dataset.

    Row r of the column for (i, l) holds values[r + L - l, i]; the time
    column spans the surviving T - L rows rescaled to [0, 1].
    """

    data: np.ndarray
    column_index: dict
    names: tuple
    n_vars: int
    max_lag: int
    _col_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def column(self, node: LaggedNode) -> np.ndarray:
        return self.data[:, self.column_index[node]]

    def columns(self, nodes: Sequence[LaggedNode]) -> Optional[np.ndarray]:
        if not nodes:
            return None
        return self.data[:, [self.column_index[u] for u in nodes]]

    def node_label(self, node: LaggedNode) -> str:
        if node.is_time:
            return "T"
        name = self.names[node.var]
        return name if node.lag == 0 else f"{name}[t-{node.lag}]"


def lag_embed(ds: TimeSeriesDataset, max_lag: int) -> LaggedDesignMatrix:
    """Stack lagged copies of every variable next to the time column."""
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    t, n = ds.values.shape
    if t <= max_lag + 2:
        raise ValueError(f"max_lag {max_lag} too large for {t} rows")
    rows = t - max_lag
    cols = []
    column_index = {}
    for i in range(n):
        for lag in range(max_lag + 1):
            column_index[LaggedNode(i, lag)] = len(cols)
            start = max_lag - lag
            cols.append(ds.values[start : start + rows, i])
    column_index[TIME_NODE] = len(cols)
    cols.append(time_index_column(rows))
    return LaggedDesignMatrix(
        data=np.column_stack(cols),
        column_index=column_index,
        names=ds.names,
        n_vars=n,
        max_lag=max_lag,
    )
