"""Battery specifications and dispatch results."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from batterypool.errors import DataError
from batterypool.series import HOUR, KW, KWH, HourlySeries, check_aligned


@dataclass(frozen=True)
class BatterySpec:
    """Energy capacity (kWh), power rate (kW) and starting state of charge."""

    capacity: float
    rate: float
    initial_soc: float = 0.0

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")
        if self.rate < 0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")
        if not 0.0 <= self.initial_soc <= self.capacity:
            raise ValueError(
                f"initial_soc {self.initial_soc} outside [0, {self.capacity}]"
            )


@dataclass(frozen=True)
class DispatchResult:
    """A realized battery schedule.

    schedule is signed power (+ charge, - discharge), soc the resulting
    state-of-charge trajectory, and mismatch the part of the commanded
    signal the battery could not absorb or deliver.
    """

    schedule: HourlySeries
    soc: HourlySeries
    mismatch: HourlySeries

    def __post_init__(self) -> None:
        check_aligned(self.schedule, self.soc, self.mismatch)


DISPATCH_TOL = 1e-9


def check_dispatch(dispatch: DispatchResult, battery: BatterySpec, tol: float = DISPATCH_TOL) -> None:
    """Verify the dispatch invariants against a battery.

    soc must follow soc[t] = soc[t-1] + schedule[t] exactly (soc[-1] is the
    battery's initial_soc), stay inside [0, capacity], and the schedule must
    respect the power rate. Raises ValueError on the first violation.
    """
    a = dispatch.schedule.values
    s = dispatch.soc.values
    prev = np.concatenate([[battery.initial_soc], s[:-1]])
    drift = np.abs(s - prev - a)
    if drift.max() > tol:
        t = int(drift.argmax())
        raise ValueError(f"soc recursion violated at t={t} by {drift[t]:.3e} kWh")
    if s.min() < -tol or s.max() > battery.capacity + tol:
        raise ValueError(
            f"soc outside [0, {battery.capacity}]: range [{s.min()}, {s.max()}]"
        )
    if np.abs(a).max() > battery.rate + tol:
        raise ValueError(f"|schedule| exceeds rate {battery.rate}: {np.abs(a).max()}")


# --- CSV interchange: timestamp, schedule_kw, soc_kwh, mismatch_kw ---

def dispatch_to_csv(dispatch: DispatchResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "schedule_kw", "soc_kwh", "mismatch_kw"])
        ts = dispatch.schedule.start
        for a, s, m in zip(
            dispatch.schedule.values, dispatch.soc.values, dispatch.mismatch.values
        ):
            writer.writerow([ts.isoformat(), repr(float(a)), repr(float(s)), repr(float(m))])
            ts += HOUR


def dispatch_from_csv(path: str | Path) -> DispatchResult:
    stamps: list[datetime] = []
    cols: tuple[list[float], list[float], list[float]] = ([], [], [])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "timestamp", "schedule_kw", "soc_kwh", "mismatch_kw",
        ]:
            raise DataError(f"{path}: expected header 'timestamp,schedule_kw,soc_kwh,mismatch_kw'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                stamps.append(datetime.fromisoformat(row[0]))
                for col, text in zip(cols, row[1:4]):
                    col.append(float(text))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not stamps:
        raise DataError(f"{path}: no data rows")
    start = stamps[0]
    for t, ts in enumerate(stamps):
        if ts != start + t * HOUR:
            raise DataError(f"{path}: timestamp gap or disorder at {ts.isoformat()}")
    return DispatchResult(
        schedule=HourlySeries(start, np.array(cols[0]), KW),
        soc=HourlySeries(start, np.array(cols[1]), KWH),
        mismatch=HourlySeries(start, np.array(cols[2]), KW),
    )
