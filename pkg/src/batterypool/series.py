"""Fixed-timestep (1 hour) value series with unit tags.

HourlySeries is the universal carrier for loads, PV output, battery
schedules and price vectors. The timebase is fixed at one hour, so a kWh
energy-per-step series and a kW average-power series are numerically
interchangeable; the unit tag records intent and arithmetic checks it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from batterypool.errors import AlignmentError, DataError, UnitError

KWH = "kWh"
KW = "kW"
PRICE = "$/kWh"
DOLLARS = "$"

UNITS = (KWH, KW, PRICE, DOLLARS)

# kWh-per-step and average kW are the same number at 1 h resolution.
_ENERGY_UNITS = frozenset({KWH, KW})

HOUR = timedelta(hours=1)


@dataclass(frozen=True)
class HourlySeries:
    """Hour-aligned sequence of finite real values with a unit tag."""

    start: datetime
    values: np.ndarray
    unit: str

    def __post_init__(self) -> None:
        if self.unit not in UNITS:
            raise UnitError(f"unknown unit {self.unit!r}, expected one of {UNITS}")
        if self.start != self.start.replace(minute=0, second=0, microsecond=0):
            raise ValueError(f"start {self.start} is not hour-aligned")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise ValueError("values must all be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size

    @property
    def end(self) -> datetime:
        """First timestamp after the series."""
        return self.start + len(self) * HOUR

    def timestamps(self) -> list[datetime]:
        return [self.start + t * HOUR for t in range(len(self))]

    def with_values(self, values: np.ndarray, unit: str | None = None) -> "HourlySeries":
        return HourlySeries(self.start, values, unit or self.unit)

    def __add__(self, other: "HourlySeries") -> "HourlySeries":
        return align_and_combine(self, other, "add")

    def __sub__(self, other: "HourlySeries") -> "HourlySeries":
        return align_and_combine(self, other, "sub")

    def __mul__(self, other: "HourlySeries") -> "HourlySeries":
        return align_and_combine(self, other, "mul")

    def total(self) -> float:
        return float(self.values.sum())


def constant_series(start: datetime, hours: int, value: float, unit: str) -> HourlySeries:
    if hours < 1:
        raise ValueError("hours must be >= 1")
    return HourlySeries(start, np.full(hours, float(value)), unit)


def check_aligned(*series: HourlySeries) -> None:
    """Raise AlignmentError unless all series share start and length."""
    first = series[0]
    for s in series[1:]:
        if s.start != first.start:
            raise AlignmentError(f"series start {s.start} != {first.start}")
        if len(s) != len(first):
            raise AlignmentError(f"series length {len(s)} != {len(first)}")


def _additive_unit(a: str, b: str) -> str:
    if a == b:
        return a
    if a in _ENERGY_UNITS and b in _ENERGY_UNITS:
        return a
    raise UnitError(f"cannot add/subtract {a!r} and {b!r}")


def _multiplicative_unit(a: str, b: str) -> str:
    pair = {a, b}
    if PRICE in pair and pair - {PRICE} <= _ENERGY_UNITS and a != b:
        return DOLLARS
    raise UnitError(f"cannot multiply {a!r} by {b!r}")


def align_and_combine(a: HourlySeries, b: HourlySeries, op: str) -> HourlySeries:
    """Elementwise combination of two aligned, unit-compatible series.

    op is one of "add", "sub", "mul". Addition and subtraction require
    identical units (kWh and kW are interchangeable); multiplication is
    only defined between an energy series and a price series and yields
    dollars.
    """
    check_aligned(a, b)
    if op == "add":
        return HourlySeries(a.start, a.values + b.values, _additive_unit(a.unit, b.unit))
    if op == "sub":
        return HourlySeries(a.start, a.values - b.values, _additive_unit(a.unit, b.unit))
    if op == "mul":
        return HourlySeries(a.start, a.values * b.values, _multiplicative_unit(a.unit, b.unit))
    raise ValueError(f"unknown op {op!r}")


# --- CSV interchange: header `timestamp,value,unit`, ISO-8601 hour stamps ---

def series_to_csv(series: HourlySeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value", "unit"])
        for ts, v in zip(series.timestamps(), series.values):
            writer.writerow([ts.isoformat(), repr(float(v)), series.unit])


def series_from_csv(path: str | Path) -> HourlySeries:
    rows: list[tuple[datetime, float, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "value", "unit"]:
            raise DataError(f"{path}: expected header 'timestamp,value,unit'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0])
                value = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            rows.append((ts, value, row[2]))
    if not rows:
        raise DataError(f"{path}: no data rows")
    units = {unit for _, _, unit in rows}
    if len(units) != 1:
        raise DataError(f"{path}: mixed units {sorted(units)}")
    start = rows[0][0]
    for t, (ts, _, _) in enumerate(rows):
        if ts != start + t * HOUR:
            raise DataError(f"{path}: timestamp gap or disorder at {ts.isoformat()}")
    return HourlySeries(start, np.array([v for _, v, _ in rows]), rows[0][2])
