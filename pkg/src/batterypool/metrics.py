"""Operational metrics: multiplexing gain, blocking probability and the
distribution of blockings, with season/day-type slicing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from batterypool.battery import BatterySpec
from batterypool.series import HourlySeries
from batterypool.tariff import SliceCalendar

ZERO_TOL_KW = 1e-6  # |mismatch| below this counts as "followed exactly"


@dataclass(frozen=True)
class ServiceAllocation:
    """Capacity booked per service against one physical battery."""

    services: tuple[tuple[str, float], ...]
    physical_capacity: float

    def __post_init__(self) -> None:
        if not self.services:
            raise ValueError("at least one service required")
        if any(c < 0 for _, c in self.services) or self.physical_capacity < 0:
            raise ValueError("capacities must be >= 0")

    @property
    def total_allocated(self) -> float:
        return float(sum(c for _, c in self.services))


def multiplexing_gain(alloc: ServiceAllocation) -> float:
    """Fraction of booked capacity not backed by physical capacity."""
    total = alloc.total_allocated
    if total <= 0:
        raise ValueError("total allocated capacity must be > 0")
    return (total - alloc.physical_capacity) / total


def blocking_probability(mismatch: HourlySeries, zero_tol: float = ZERO_TOL_KW) -> float:
    """Fraction of hours where the battery deviated from the command."""
    if zero_tol < 0:
        raise ValueError("zero_tol must be >= 0")
    if len(mismatch) == 0:
        raise ValueError("mismatch series must not be empty")
    return float(np.mean(np.abs(mismatch.values) > zero_tol))


@dataclass(frozen=True)
class SliceStats:
    probability: float
    mean: float
    std: float
    hours: int
    histogram: tuple[tuple[float, float, int], ...]


@dataclass(frozen=True)
class BlockingStats:
    probability: float
    mean: float
    std: float
    histogram: tuple[tuple[float, float, int], ...]
    by_slice: dict[str, SliceStats]


def _histogram(
    values: np.ndarray, edges: np.ndarray | None, zero_tol: float
) -> tuple[tuple[tuple[float, float, int], ...], np.ndarray | None]:
    """50 uniform bins over the nonzero values plus a dedicated zero bin."""
    zeros = np.abs(values) <= zero_tol
    nonzero = values[~zeros]
    bins: list[tuple[float, float, int]] = [(-zero_tol, zero_tol, int(zeros.sum()))]
    if nonzero.size:
        if edges is None:
            lo, hi = float(nonzero.min()), float(nonzero.max())
            if hi <= lo:
                hi = lo + 1e-9
            edges = np.linspace(lo, hi, 51)
        counts, _ = np.histogram(np.clip(nonzero, edges[0], edges[-1]), bins=edges)
        bins.extend(
            (float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(len(edges) - 1)
        )
    return tuple(bins), edges


def blocking_distribution(
    mismatch: HourlySeries,
    calendar: SliceCalendar,
    zero_tol: float = ZERO_TOL_KW,
) -> BlockingStats:
    """Full blocking statistics with (season x day-type) slices.

    Slice histograms reuse the global bin edges so they stack.
    """
    if len(calendar) != len(mismatch) or calendar.start != mismatch.start:
        raise ValueError("calendar does not cover the mismatch horizon")
    values = mismatch.values
    histogram, edges = _histogram(values, None, zero_tol)
    by_slice: dict[str, SliceStats] = {}
    seasons = np.array(calendar.seasons)
    dtypes = np.array(calendar.day_types)
    for season in sorted(set(calendar.seasons)):
        for dtype in sorted(set(calendar.day_types)):
            mask = (seasons == season) & (dtypes == dtype)
            if not mask.any():
                continue
            sub = values[mask]
            sub_hist, _ = _histogram(sub, edges, zero_tol)
            by_slice[f"{season}/{dtype}"] = SliceStats(
                probability=float(np.mean(np.abs(sub) > zero_tol)),
                mean=float(sub.mean()),
                std=float(sub.std()),
                hours=int(mask.sum()),
                histogram=sub_hist,
            )
    return BlockingStats(
        probability=float(np.mean(np.abs(values) > zero_tol)),
        mean=float(values.mean()),
        std=float(values.std()),
        histogram=histogram,
        by_slice=by_slice,
    )


@dataclass(frozen=True)
class ConstraintCauses:
    """Which battery limit raised each blocking (an hour may hit several)."""

    rate_limited: np.ndarray
    full: np.ndarray
    empty: np.ndarray
    blocked: np.ndarray

    @property
    def counts(self) -> dict[str, int]:
        return {
            "rate-limited": int(self.rate_limited.sum()),
            "full": int(self.full.sum()),
            "empty": int(self.empty.sum()),
        }


def constraint_decomposition(
    aggregate: HourlySeries, battery: BatterySpec, zero_tol: float = ZERO_TOL_KW
) -> ConstraintCauses:
    """Classify blocked hours of the myopic projection by cause:
    command beyond the power rate, battery full, or battery empty."""
    agg = aggregate.values
    cap, rate = battery.capacity, battery.rate
    n = agg.size
    rate_limited = np.zeros(n, dtype=bool)
    full = np.zeros(n, dtype=bool)
    empty = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    s = battery.initial_soc
    for t in range(n):
        act = min(max(agg[t], -rate), rate)
        s_new = min(max(s + act, 0.0), cap)
        deviation = agg[t] - (s_new - s)
        if abs(deviation) > zero_tol:
            blocked[t] = True
            # exact clause checks: a blocked hour clamped strictly somewhere
            if abs(agg[t]) > rate:
                rate_limited[t] = True
            if s + agg[t] > cap:
                full[t] = True
            if s + agg[t] < 0.0:
                empty[t] = True
        s = s_new
    return ConstraintCauses(rate_limited=rate_limited, full=full, empty=empty, blocked=blocked)
