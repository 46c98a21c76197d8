"""Balanced linear panels: container, CSV ingestion and full-sample demeaning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    InvalidPanel,
    MissingCell,
    NonPositiveValue,
    ParseError,
    WindowTooSmall,
)


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidPanel(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelData:
    """Balanced panel ``y[i, t] = x[i, t, :] @ beta_i (+ alpha_i) + e[i, t]``.

    ``y`` has shape (N, T) and ``x`` has shape (N, T, K). Arrays are stored
    read-only, so instances can be shared freely.
    """

    y: np.ndarray
    x: np.ndarray
    has_intercepts: bool = False
    unit_labels: tuple = field(default=())
    time_labels: tuple = field(default=())
    regressor_names: tuple = field(default=())
    response_name: str = "y"

    def __post_init__(self):
        y = _frozen(self.y, 2)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        x = _frozen(x, 3)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        n, t = y.shape
        if x.shape[:2] != (n, t):
            raise InvalidPanel(
                f"y has shape {y.shape} but x has shape {x.shape}",
                y_shape=str(y.shape), x_shape=str(x.shape),
            )
        k = x.shape[2]
        if n < 1 or k < 1:
            raise InvalidPanel("panel needs at least one unit and one regressor")
        min_t = k + 2 + int(self.has_intercepts)
        if t < min_t:
            raise InvalidPanel(f"T={t} is too short, need T >= {min_t}", T=t, K=k)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise InvalidPanel("panel contains NaN or infinite values")
        if not self.unit_labels:
            object.__setattr__(self, "unit_labels", tuple(str(i) for i in range(n)))
        if not self.time_labels:
            object.__setattr__(self, "time_labels", tuple(str(s) for s in range(1, t + 1)))
        if not self.regressor_names:
            object.__setattr__(self, "regressor_names", tuple(f"x{j + 1}" for j in range(k)))
        if len(self.unit_labels) != n or len(self.time_labels) != t or len(self.regressor_names) != k:
            raise InvalidPanel("label lengths do not match the array dimensions")

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_regressors(self) -> int:
        return self.x.shape[2]

    def take_units(self, idx: Sequence[int]) -> PanelData:
        """Sub-panel (or reordering) of the given units."""
        idx = list(idx)
        return replace(
            self,
            y=self.y[idx],
            x=self.x[idx],
            unit_labels=tuple(self.unit_labels[i] for i in idx),
        )

    def equals(self, other: PanelData) -> bool:
        return (
            self.has_intercepts == other.has_intercepts
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and self.unit_labels == other.unit_labels
            and self.time_labels == other.time_labels
            and self.regressor_names == other.regressor_names
        )


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for long-format panel CSV files."""

    unit_column: str
    time_column: str
    response_column: str
    regressor_columns: tuple
    log_transform: bool = False

    def __post_init__(self):
        cols = tuple(self.regressor_columns)
        object.__setattr__(self, "regressor_columns", cols)
        if not cols:
            raise ParseError("schema needs at least one regressor column")
        if len(set(cols)) != len(cols):
            raise ParseError("regressor column names must be distinct")

    @classmethod
    def from_dict(cls, d: dict) -> PanelSchema:
        try:
            return cls(
                unit_column=d["unit_column"],
                time_column=d["time_column"],
                response_column=d["response_column"],
                regressor_columns=tuple(d["regressor_columns"]),
                log_transform=bool(d.get("log_transform", False)),
            )
        except KeyError as exc:
            raise ParseError(f"schema is missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "unit_column": self.unit_column,
            "time_column": self.time_column,
            "response_column": self.response_column,
            "regressor_columns": list(self.regressor_columns),
            "log_transform": self.log_transform,
        }


def _time_sort_key(labels):
    try:
        vals = [float(s) for s in labels]
    except ValueError:
        return sorted(labels)
    return [s for _, s in sorted(zip(vals, labels))]


def _parse_value(text: str, column: str, line: int, log: bool) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"line {line}: column {column!r} has non-numeric value {text!r}",
                         line=line, column=column) from None
    if not math.isfinite(v):
        raise ParseError(f"line {line}: column {column!r} is not finite", line=line, column=column)
    if log:
        if v <= 0:
            raise NonPositiveValue(f"line {line}: cannot take log of {v} in column {column!r}",
                                   line=line, column=column, value=v)
        v = math.log(v)
    return v


def load_panel_csv(path, schema: PanelSchema, has_intercepts: bool = False) -> PanelData:
    """Read a long-format CSV (one row per unit and period) into a balanced panel.

    Units keep their order of first appearance; periods are sorted ascending
    (numerically when every label parses as a number).
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path} is empty")
        needed = [schema.unit_column, schema.time_column, schema.response_column,
                  *schema.regressor_columns]
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"columns not found in header: {missing}")
        cells: dict = {}
        units: dict = {}
        times: set = set()
        for line, row in enumerate(reader, start=2):
            if None in row or any(row[c] is None for c in needed):
                raise ParseError(f"line {line}: wrong number of fields", line=line)
            unit = row[schema.unit_column].strip()
            time = row[schema.time_column].strip()
            vals = [row[c].strip() for c in needed[2:]]
            if any(v == "" for v in vals):
                raise MissingCell(f"line {line}: empty value", line=line, unit=unit, time=time)
            key = (unit, time)
            if key in cells:
                raise DuplicateKey(f"duplicate entry for unit {unit!r}, time {time!r}",
                                   unit=unit, time=time)
            cells[key] = [
                _parse_value(v, c, line, schema.log_transform) for v, c in zip(vals, needed[2:])
            ]
            units.setdefault(unit, len(units))
            times.add(time)
    if not cells:
        raise ParseError(f"{path} has no data rows")

    unit_labels = list(units)
    time_labels = _time_sort_key(times)
    n, t, k = len(unit_labels), len(time_labels), len(schema.regressor_columns)
    y = np.empty((n, t))
    x = np.empty((n, t, k))
    for i, u in enumerate(unit_labels):
        for s, tm in enumerate(time_labels):
            try:
                row = cells[(u, tm)]
            except KeyError:
                raise MissingCell(f"no observation for unit {u!r} at time {tm!r}",
                                  unit=u, time=tm) from None
            y[i, s] = row[0]
            x[i, s] = row[1:]
    return PanelData(
        y=y, x=x, has_intercepts=has_intercepts,
        unit_labels=tuple(unit_labels), time_labels=tuple(time_labels),
        regressor_names=tuple(schema.regressor_columns), response_name=schema.response_column,
    )


def save_panel_csv(panel: PanelData, path, schema: PanelSchema | None = None) -> None:
    """Write a panel in long format. Floats use ``repr`` so values round-trip exactly."""
    if schema is None:
        schema = PanelSchema("unit", "time", panel.response_name, panel.regressor_names)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.unit_column, schema.time_column, schema.response_column,
                    *schema.regressor_columns])
        for i, u in enumerate(panel.unit_labels):
            for s, tm in enumerate(panel.time_labels):
                w.writerow([u, tm, repr(float(panel.y[i, s])),
                            *(repr(float(v)) for v in panel.x[i, s])])


def window_length(n_periods: int, kappa: float) -> int:
    """``floor(T * kappa)``, guarded against representation error (0.7 * 10 -> 7)."""
    return int(math.floor(n_periods * kappa + 1e-9))


def validate_window_feasibility(panel: PanelData, p: float) -> None:
    """Raise WindowTooSmall unless ``floor(p*T)`` exceeds K (K+1 with intercepts)."""
    if not 0.0 < p < 1.0 + 1e-12:
        raise WindowTooSmall(f"p={p} must lie in (0, 1]", p=p)
    need = panel.n_regressors + int(panel.has_intercepts)
    length = window_length(panel.n_periods, p)
    if length <= need:
        raise WindowTooSmall(
            f"floor(p*T) = {length} must exceed {need} (T={panel.n_periods}, "
            f"K={panel.n_regressors}, intercepts={panel.has_intercepts})",
            p=p, T=panel.n_periods, K=panel.n_regressors, window=length,
        )


def demean_full(panel: PanelData) -> PanelData:
    """Remove each unit's full-sample time mean from y and every regressor."""
    if not panel.has_intercepts:
        raise InvalidPanel("demean_full is only defined for panels with intercepts")
    y = panel.y - panel.y.mean(axis=1, keepdims=True)
    x = panel.x - panel.x.mean(axis=1, keepdims=True)
    # T >= K+2 still holds after dropping the intercept flag
    return replace(panel, y=y, x=x, has_intercepts=False)
