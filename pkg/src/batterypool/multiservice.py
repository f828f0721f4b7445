"""Coordination with congestion management via a residual-capacity envelope.

Congestion management outranks the storage-sharing service: grid-side
actions park energy in the battery and reserve rate, leaving a
time-varying SoC band [soc_min, soc_max] and rate limit for the shared
service. When the band moves, the battery is first forced toward it
(congestion has priority) and the whole deviation from the aggregate
command counts as mismatch.

Because real congestion schedules are site data we do not have, a seeded
generator synthesizes an envelope from an autocorrelated wind-like driver,
calibrated by quantile-threshold search so the realized availability
statistics hit their targets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from batterypool.battery import BatterySpec, DispatchResult
from batterypool.errors import ConfigurationError, DataError
from batterypool.series import HOUR, KW, KWH, HourlySeries, check_aligned

_BAND_TOL = 1e-9


@dataclass(frozen=True)
class ResidualEnvelope:
    """Hourly SoC band and rate limit left over for the shared service."""

    soc_min: HourlySeries
    soc_max: HourlySeries
    rate_limit: HourlySeries

    def __post_init__(self) -> None:
        check_aligned(self.soc_min, self.soc_max, self.rate_limit)
        if self.soc_min.values.min() < -_BAND_TOL:
            raise ConfigurationError("soc_min must be >= 0")
        if np.any(self.soc_min.values > self.soc_max.values + _BAND_TOL):
            raise ConfigurationError("soc_min must not exceed soc_max")
        if self.rate_limit.values.min() < -_BAND_TOL:
            raise ConfigurationError("rate_limit must be >= 0")

    def __len__(self) -> int:
        return len(self.soc_min)

    @property
    def residual(self) -> np.ndarray:
        return self.soc_max.values - self.soc_min.values

    def validate_against(self, battery: BatterySpec) -> None:
        if self.soc_max.values.max() > battery.capacity + _BAND_TOL:
            raise ConfigurationError("envelope soc_max exceeds battery capacity")
        if self.rate_limit.values.max() > battery.rate + _BAND_TOL:
            raise ConfigurationError("envelope rate_limit exceeds battery rate")
        # band moves must be reachable within the physical rate, otherwise the
        # forced correction could not keep the SoC inside the band
        for name, band in (("soc_min", self.soc_min.values), ("soc_max", self.soc_max.values)):
            move = np.abs(np.diff(band)).max() if len(band) > 1 else 0.0
            if move > battery.rate + _BAND_TOL:
                raise ConfigurationError(
                    f"envelope {name} moves faster than the battery rate ({move:.3f} kWh/h)"
                )
        first_lo, first_hi = self.soc_min.values[0], self.soc_max.values[0]
        if not (first_lo - battery.rate - _BAND_TOL <= battery.initial_soc <= first_hi + battery.rate + _BAND_TOL):
            raise ConfigurationError("initial SoC cannot reach the first envelope band")


@dataclass(frozen=True)
class EnvelopeStats:
    full_availability_fraction: float
    zero_availability_fraction: float
    mean_residual_fraction: float

    def __post_init__(self) -> None:
        for name in ("full_availability_fraction", "zero_availability_fraction", "mean_residual_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.full_availability_fraction + self.zero_availability_fraction > 1.0 + 1e-12:
            raise ValueError("full and zero availability fractions exceed 1 together")


def full_envelope(start: datetime, hours: int, battery: BatterySpec) -> ResidualEnvelope:
    """Envelope with the whole battery available at every hour."""
    return ResidualEnvelope(
        soc_min=HourlySeries(start, np.zeros(hours), KWH),
        soc_max=HourlySeries(start, np.full(hours, battery.capacity), KWH),
        rate_limit=HourlySeries(start, np.full(hours, battery.rate), KW),
    )


def project_follow_envelope(
    aggregate: HourlySeries,
    battery: BatterySpec,
    envelope: ResidualEnvelope,
) -> DispatchResult:
    """Myopic projection under a time-varying envelope.

    When the prior SoC sits outside the hour's band the battery first
    corrects into the band (the congestion service acting), then performs
    as much of the commanded action as the residual rate and band allow.
    The full deviation from the command is attributed to mismatch.
    """
    check_aligned(aggregate, envelope.soc_min)
    envelope.validate_against(battery)
    agg = aggregate.values
    lo = envelope.soc_min.values
    hi = envelope.soc_max.values
    rl = envelope.rate_limit.values
    phys_rate = battery.rate
    schedule = np.empty_like(agg)
    soc = np.empty_like(agg)
    s = battery.initial_soc
    for t in range(agg.size):
        corrected = min(max(s, lo[t]), hi[t])
        correction = corrected - s
        budget = min(rl[t], phys_rate - abs(correction))
        if budget < 0.0:
            budget = 0.0
        act = min(max(agg[t], -budget), budget)
        s_new = min(max(corrected + act, lo[t]), hi[t])
        schedule[t] = s_new - s
        soc[t] = s_new
        s = s_new
    mismatch = agg - schedule
    return DispatchResult(
        schedule=HourlySeries(aggregate.start, schedule, KW),
        soc=HourlySeries(aggregate.start, soc, KWH),
        mismatch=HourlySeries(aggregate.start, mismatch, KW),
    )


def envelope_stats(envelope: ResidualEnvelope, battery: BatterySpec) -> EnvelopeStats:
    """Realized availability fractions of an envelope."""
    residual = envelope.residual
    cap = battery.capacity
    if cap <= 0:
        raise ValueError("battery capacity must be > 0")
    return EnvelopeStats(
        full_availability_fraction=float(np.mean(residual >= cap - 1e-9)),
        zero_availability_fraction=float(np.mean(residual <= 1e-9)),
        mean_residual_fraction=float(residual.mean() / cap),
    )


def make_congestion_driver(start: datetime, hours: int, seed: int) -> HourlySeries:
    """Autocorrelated lognormal wind-like series used to place congestions."""
    rng = np.random.default_rng(seed)
    rho = 0.97
    noise = rng.standard_normal(hours) * np.sqrt(1.0 - rho * rho)
    z = np.empty(hours)
    acc = rng.standard_normal()
    for t in range(hours):
        acc = rho * acc + noise[t]
        z[t] = acc
    return HourlySeries(start, np.exp(z), KW)


def _parked_energy(driver: np.ndarray, thr_lo: float, thr_hi: float, cap: float, rate: float) -> np.ndarray:
    """Congestion-parked energy: 0 below thr_lo, cap above thr_hi, ramped at
    the battery rate so band moves stay physically reachable."""
    if thr_hi <= thr_lo:
        thr_hi = thr_lo + 1e-12
    target = cap * np.clip((driver - thr_lo) / (thr_hi - thr_lo), 0.0, 1.0)
    parked = np.empty_like(target)
    prev = 0.0  # congestion accumulates from a clean start
    for t in range(target.size):
        prev = min(max(target[t], prev - rate), prev + rate)
        parked[t] = prev
    return parked


def synth_envelope(
    start: datetime,
    hours: int,
    battery: BatterySpec,
    stats: EnvelopeStats,
    congestion_driver: HourlySeries | None = None,
    seed: int = 0,
    tolerance_pp: float = 2.0,
) -> ResidualEnvelope:
    """Stochastic envelope whose realized availability matches the targets.

    Congestion windows (raised soc_min, reduced rate) sit where the driver
    is high; the two driver thresholds are bisected until the realized
    full- and zero-availability fractions land within tolerance_pp
    percentage points of the targets. Deterministic given the seed.
    """
    if battery.capacity <= 0 or battery.rate <= 0:
        raise ValueError("battery capacity and rate must be > 0 to build an envelope")
    if congestion_driver is None:
        congestion_driver = make_congestion_driver(start, hours, seed)
    if len(congestion_driver) != hours or congestion_driver.start != start:
        raise ConfigurationError("congestion driver does not cover the horizon")
    cap, rate = battery.capacity, battery.rate
    f_full = stats.full_availability_fraction
    f_zero = stats.zero_availability_fraction

    if f_full >= 1.0:
        return full_envelope(start, hours, battery)

    driver = congestion_driver.values
    order = np.sort(driver)

    def quantile(level: float) -> float:
        level = min(max(level, 0.0), 1.0)
        return float(order[min(int(level * hours), hours - 1)])

    def thr_hi(level: float) -> float:
        # no full-congestion hours wanted: keep the upper threshold out of reach
        if f_zero <= 0.0:
            return 2.0 * float(order[-1]) + 1.0
        return quantile(level)

    inner_tol = tolerance_pp / 100.0 / 4.0
    # alternate bisections on the two quantile levels; the rate ramp couples
    # them only weakly through decay tails, so a few outer rounds settle it
    u, v = f_full, 1.0 - f_zero
    parked = _parked_energy(driver, quantile(u), thr_hi(v), cap, rate)
    for _ in range(4):
        lo_u, hi_u = 0.0, 1.0
        for _ in range(25):
            parked = _parked_energy(driver, quantile(u), thr_hi(v), cap, rate)
            realized_full = float(np.mean(parked <= 1e-9))
            if abs(realized_full - f_full) <= inner_tol:
                break
            if realized_full < f_full:
                lo_u = u
            else:
                hi_u = u
            u = 0.5 * (lo_u + hi_u)
        if f_zero <= 0.0:
            continue
        lo_v, hi_v = u, 1.0
        for _ in range(25):
            parked = _parked_energy(driver, quantile(u), thr_hi(v), cap, rate)
            realized_zero = float(np.mean(parked >= cap - 1e-9))
            if abs(realized_zero - f_zero) <= inner_tol:
                break
            if realized_zero > f_zero:
                lo_v = v
            else:
                hi_v = v
            v = 0.5 * (lo_v + hi_v)

    envelope = ResidualEnvelope(
        soc_min=HourlySeries(start, parked, KWH),
        soc_max=HourlySeries(start, np.full(hours, cap), KWH),
        rate_limit=HourlySeries(start, rate * (1.0 - parked / cap), KW),
    )
    realized = envelope_stats(envelope, battery)
    tol = tolerance_pp / 100.0
    if (
        abs(realized.full_availability_fraction - f_full) > tol
        or abs(realized.zero_availability_fraction - f_zero) > tol
    ):
        raise ConfigurationError(
            "envelope calibration failed: realized "
            f"({realized.full_availability_fraction:.3f}, {realized.zero_availability_fraction:.3f}) "
            f"vs target ({f_full:.3f}, {f_zero:.3f}); the driver may be too short "
            "or the targets unreachable at this battery rate"
        )
    return envelope


# --- CSV interchange: timestamp, soc_min_kwh, soc_max_kwh, rate_kw ---

def envelope_to_csv(envelope: ResidualEnvelope, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "soc_min_kwh", "soc_max_kwh", "rate_kw"])
        ts = envelope.soc_min.start
        for lo, hi, rl in zip(
            envelope.soc_min.values, envelope.soc_max.values, envelope.rate_limit.values
        ):
            writer.writerow([ts.isoformat(), repr(float(lo)), repr(float(hi)), repr(float(rl))])
            ts += HOUR


def envelope_from_csv(path: str | Path) -> ResidualEnvelope:
    stamps: list[datetime] = []
    lo: list[float] = []
    hi: list[float] = []
    rl: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "timestamp", "soc_min_kwh", "soc_max_kwh", "rate_kw",
        ]:
            raise DataError(f"{path}: expected header 'timestamp,soc_min_kwh,soc_max_kwh,rate_kw'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                stamps.append(datetime.fromisoformat(row[0]))
                lo.append(float(row[1]))
                hi.append(float(row[2]))
                rl.append(float(row[3]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not stamps:
        raise DataError(f"{path}: no data rows")
    start = stamps[0]
    for t, ts in enumerate(stamps):
        if ts != start + t * HOUR:
            raise DataError(f"{path}: timestamp gap or disorder at {ts.isoformat()}")
    return ResidualEnvelope(
        soc_min=HourlySeries(start, np.array(lo), KWH),
        soc_max=HourlySeries(start, np.array(hi), KWH),
        rate_limit=HourlySeries(start, np.array(rl), KW),
    )
