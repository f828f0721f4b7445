"""Cohort data: meter CSV ingestion, synthetic household generation,
zero-net-energy PV sizing, and representative-household selection.

The synthetic generator stands in for proprietary smart-meter and
irradiance data sets. It produces seeded, reproducible cohorts with a
seasonal load shape, an evening peak that flattens on weekends, and
zone-dependent irradiance, which is enough structure for the sharing
economics to behave like the real-data study: a TOU evening peak to
arbitrage against and a midday PV surplus worth storing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from batterypool.errors import DataError
from batterypool.series import HOUR, KW, KWH, HourlySeries, check_aligned
from batterypool.household import HouseholdProfile

log = logging.getLogger(__name__)

DEFAULT_ZONES = (("coast", 0.40), ("inland", 0.35), ("central", 0.25))

# zone knobs: (clearness, summer cooling amplitude)
_ZONE_CLIMATE = {
    "coast": (0.80, 0.10),
    "inland": (0.90, 0.35),
    "central": (0.95, 0.50),
}


@dataclass(frozen=True)
class LoadShapeParams:
    """Parametrized daily/seasonal load shape library."""

    night: float = 0.55
    morning: float = 0.95
    day: float = 0.70
    evening_peak: float = 1.75
    weekend_day: float = 0.95
    weekend_evening: float = 1.30
    winter_lift: float = 0.15
    noise_sigma: float = 0.25
    # absences decorrelate storage use across households: an away household
    # keeps a baseload of vacation_level and parks its virtual battery near
    # empty. Summer trips and winter-holiday travel are drawn independently.
    vacation_share: float = 0.7
    winter_travel_share: float = 0.35
    vacation_level: float = 0.15


@dataclass(frozen=True)
class CohortConfig:
    n_households: int = 1000
    climate_zones: tuple[tuple[str, float], ...] = DEFAULT_ZONES
    load_shapes: LoadShapeParams = field(default_factory=LoadShapeParams)
    annual_kwh_median: float = 5400.0
    annual_kwh_sigma: float = 0.55
    pv_zero_net_energy: bool = True
    seed: int = 0
    start: datetime = datetime(2021, 1, 1)
    hours: int = 8760

    def __post_init__(self) -> None:
        if self.n_households < 1:
            raise ValueError("n_households must be >= 1")
        if self.hours < 24:
            raise ValueError("hours must cover at least one day")
        weights = [w for _, w in self.climate_zones]
        if not weights or abs(sum(weights) - 1.0) > 1e-9 or min(weights) < 0:
            raise ValueError("climate zone weights must be >= 0 and sum to 1")
        if self.annual_kwh_median <= 0 or self.annual_kwh_sigma <= 0:
            raise ValueError("annual kWh distribution parameters must be > 0")


# ---------------------------------------------------------------------------
# Meter CSV (columns: id, zone, timestamp, kwh)
# ---------------------------------------------------------------------------

def load_meter_csv(path: str | Path, pv_path: str | Path | None = None) -> list[HouseholdProfile]:
    """Read household load profiles (and optionally matching PV output).

    Households whose hours are not contiguous are skipped with a warning;
    malformed rows and negative readings abort with the line number.
    """
    loads = _read_meter(path)
    pvs = _read_meter(pv_path) if pv_path else {}
    profiles: list[HouseholdProfile] = []
    for hid in sorted(loads):
        zone, rows = loads[hid]
        series = _rows_to_series(hid, rows, str(path))
        if series is None:
            continue
        if hid in pvs:
            pv_series = _rows_to_series(hid, pvs[hid][1], str(pv_path))
            if pv_series is None:
                log.warning("household %s: pv series has gaps, skipped entirely", hid)
                continue
            pv = pv_series
        else:
            pv = HourlySeries(series.start, np.zeros(len(series)), KWH)
        profiles.append(HouseholdProfile(id=hid, load=series, pv=pv, climate_zone=zone))
    return profiles


def _read_meter(path: str | Path) -> dict[str, tuple[str, list[tuple[datetime, float]]]]:
    out: dict[str, tuple[str, list[tuple[datetime, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "zone", "timestamp", "kwh"]:
            raise DataError(f"{path}: expected header 'id,zone,timestamp,kwh'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            hid, zone = row[0], row[1]
            try:
                ts = datetime.fromisoformat(row[2])
                kwh = float(row[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not math.isfinite(kwh) or kwh < 0:
                raise DataError(f"{path}:{lineno}: kwh must be finite and >= 0, got {row[3]}")
            out.setdefault(hid, (zone, []))[1].append((ts, kwh))
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def _rows_to_series(hid: str, rows: list[tuple[datetime, float]], src: str) -> HourlySeries | None:
    rows = sorted(rows, key=lambda r: r[0])
    start = rows[0][0]
    for t, (ts, _) in enumerate(rows):
        if ts != start + t * HOUR:
            log.warning("%s: household %s has a gap before %s, skipped", src, hid, ts.isoformat())
            return None
    return HourlySeries(start, np.array([v for _, v in rows]), KWH)


def save_meter_csv(profiles: list[HouseholdProfile], path: str | Path, which: str = "load") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "zone", "timestamp", "kwh"])
        for prof in sorted(profiles, key=lambda p: p.id):
            series = prof.load if which == "load" else prof.pv
            for ts, v in zip(series.timestamps(), series.values):
                writer.writerow([prof.id, prof.climate_zone, ts.isoformat(), repr(float(v))])


# ---------------------------------------------------------------------------
# PV sizing
# ---------------------------------------------------------------------------

def pv_from_irradiance(profile: HouseholdProfile, irradiance: HourlySeries) -> HourlySeries:
    """Rooftop PV scaled so annual output equals annual consumption."""
    check_aligned(profile.load, irradiance)
    if irradiance.values.min() < 0:
        raise ValueError("irradiance must be >= 0")
    total_irr = irradiance.values.sum()
    if total_irr <= 0:
        raise ValueError("irradiance sums to zero, cannot size PV")
    k = profile.load.values.sum() / total_irr
    return HourlySeries(profile.load.start, k * irradiance.values, KWH)


# ---------------------------------------------------------------------------
# Synthetic cohort
# ---------------------------------------------------------------------------

def synth_irradiance(zone: str, start: datetime, hours: int, rng: np.random.Generator) -> HourlySeries:
    """Normalized irradiance: clear-sky daylight arc, seasonal amplitude,
    autocorrelated daily cloud factor."""
    clearness, _ = _ZONE_CLIMATE.get(zone, (0.85, 0.3))
    n_days = hours // 24 + 2
    cloud = np.empty(n_days)
    c = 0.0
    for d in range(n_days):
        c = 0.6 * c + 0.4 * rng.standard_normal()
        cloud[d] = np.clip(clearness * (1.0 - 0.45 * abs(c)), 0.15, 1.0)
    values = np.zeros(hours)
    ts = start
    for t in range(hours):
        doy = ts.timetuple().tm_yday
        daylength = 12.0 + 2.8 * math.sin(2.0 * math.pi * (doy - 80) / 365.0)
        sunrise = 12.0 - daylength / 2.0
        x = (ts.hour + 0.5 - sunrise) / daylength
        if 0.0 < x < 1.0:
            amp = 1.0 - 0.45 * math.cos(2.0 * math.pi * (doy - 172) / 365.0)
            day_index = (ts - start).days
            values[t] = amp * math.sin(math.pi * x) * cloud[day_index]
        ts += HOUR
    return HourlySeries(start, values, KW)


def _hour_weights(
    shape: LoadShapeParams, peak_hour: int, weekend: bool, midday_factor: float
) -> np.ndarray:
    w = np.full(24, shape.night)
    w[6:10] = shape.morning
    base_day = (shape.weekend_day if weekend else shape.day) * midday_factor
    w[10:16] = base_day
    evening = shape.weekend_evening if weekend else shape.evening_peak
    for h in range(16, 23):
        dist = abs(h - peak_hour)
        w[h] = max(base_day, evening * (1.0 - 0.22 * dist))
    w[23] = shape.night * 1.2
    return w


def synth_cohort(config: CohortConfig) -> tuple[list[HouseholdProfile], dict[str, HourlySeries]]:
    """Deterministic-by-seed synthetic cohort plus per-zone irradiance."""
    root = np.random.SeedSequence(config.seed)
    zone_names = [z for z, _ in config.climate_zones]
    zone_seeds = root.spawn(len(zone_names) + 1)
    irradiance = {
        zone: synth_irradiance(zone, config.start, config.hours, np.random.default_rng(zseed))
        for zone, zseed in zip(zone_names, zone_seeds[:-1])
    }
    rng = np.random.default_rng(zone_seeds[-1])

    weights = np.array([w for _, w in config.climate_zones])
    counts = _largest_remainder(weights * config.n_households)
    shape = config.load_shapes
    day_types = _weekend_mask(config.start, config.hours)
    summer_hours = _month_hours(config.start, config.hours, (6, 7, 8, 9))
    holiday_hours = _month_hours(config.start, config.hours, (12, 1))

    profiles: list[HouseholdProfile] = []
    idx = 0
    for zone, count in zip(zone_names, counts):
        _, cooling = _ZONE_CLIMATE.get(zone, (0.85, 0.3))
        for _ in range(count):
            annual = config.annual_kwh_median * math.exp(
                config.annual_kwh_sigma * rng.standard_normal()
            )
            peak_hour = int(rng.integers(18, 21))
            scale_jitter = rng.uniform(0.85, 1.15)
            midday_factor = rng.uniform(0.5, 1.7)  # commuters vs home all day
            weekday_w = _hour_weights(shape, peak_hour, False, midday_factor)
            weekend_w = _hour_weights(shape, peak_hour, True, midday_factor)
            noise = np.exp(shape.noise_sigma * rng.standard_normal(config.hours)
                           - 0.5 * shape.noise_sigma**2)
            values = np.empty(config.hours)
            ts = config.start
            for t in range(config.hours):
                doy = ts.timetuple().tm_yday
                seasonal = (
                    1.0
                    + cooling * max(0.0, math.sin(math.pi * (doy - 135) / 150.0))
                    + shape.winter_lift * max(0.0, math.cos(2.0 * math.pi * doy / 365.0))
                )
                w = weekend_w if day_types[t] else weekday_w
                values[t] = w[ts.hour] * seasonal * scale_jitter
                ts += HOUR
            values *= noise
            if summer_hours.size and rng.random() < shape.vacation_share:
                away_start = int(summer_hours[rng.integers(summer_hours.size)])
                away_len = 24 * int(rng.integers(7, 15))
                sel = slice(away_start, min(away_start + away_len, config.hours))
                values[sel] *= shape.vacation_level
            if holiday_hours.size and rng.random() < shape.winter_travel_share:
                away_start = int(holiday_hours[rng.integers(holiday_hours.size)])
                away_len = 24 * int(rng.integers(4, 11))
                sel = slice(away_start, min(away_start + away_len, config.hours))
                values[sel] *= shape.vacation_level
            values *= annual / values.sum() * (config.hours / 8760.0)
            load = HourlySeries(config.start, values, KWH)
            hid = f"h{idx:05d}"
            prof = HouseholdProfile(id=hid, load=load, pv=load.with_values(np.zeros(config.hours)), climate_zone=zone)
            if config.pv_zero_net_energy:
                prof = HouseholdProfile(
                    id=hid,
                    load=load,
                    pv=pv_from_irradiance(prof, irradiance[zone]),
                    climate_zone=zone,
                )
            profiles.append(prof)
            idx += 1
    return profiles, irradiance


def _weekend_mask(start: datetime, hours: int) -> np.ndarray:
    mask = np.empty(hours, dtype=bool)
    ts = start
    for t in range(hours):
        mask[t] = ts.weekday() >= 5
        ts += HOUR
    return mask


def _month_hours(start: datetime, hours: int, months: tuple[int, ...]) -> np.ndarray:
    got = np.empty(hours, dtype=int)
    ts = start
    for t in range(hours):
        got[t] = ts.month
        ts += HOUR
    return np.flatnonzero(np.isin(got, months))


def _largest_remainder(targets: np.ndarray) -> list[int]:
    floors = np.floor(targets).astype(int)
    remainder = int(round(targets.sum())) - int(floors.sum())
    order = np.argsort(-(targets - floors))
    for i in order[:remainder]:
        floors[i] += 1
    return floors.tolist()


# ---------------------------------------------------------------------------
# Representative selection (k-means on normalized weekday shapes)
# ---------------------------------------------------------------------------

def _weekday_shape(profile: HouseholdProfile, weekend: np.ndarray) -> np.ndarray:
    """24-dim mean weekday load shape, normalized to sum 1."""
    hours = (profile.load.start.hour + np.arange(len(profile.load))) % 24
    values = profile.load.values
    shape = np.zeros(24)
    for h in range(24):
        sel = (hours == h) & ~weekend
        shape[h] = values[sel].mean() if sel.any() else 0.0
    total = shape.sum()
    return shape / total if total > 0 else shape


def _kmeans(
    points: np.ndarray, k: int, rng: np.random.Generator,
    max_iter: int = 100, tol: float = 1e-6,
) -> np.ndarray:
    """Lloyd's algorithm with farthest-point seeding; returns labels."""
    n = points.shape[0]
    k = min(k, n)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    dist = np.linalg.norm(points - centers[0], axis=1)
    for j in range(1, k):
        centers[j] = points[int(dist.argmax())]
        dist = np.minimum(dist, np.linalg.norm(points - centers[j], axis=1))
    labels = np.zeros(n, dtype=int)
    inertia = np.inf
    for it in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_inertia = float(d2[np.arange(n), labels].sum())
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:  # re-seed an empty cluster on the farthest point
                far = int(d2[np.arange(n), labels].argmax())
                centers[j] = points[far]
        if inertia - new_inertia <= tol * max(inertia, 1e-12):
            break
        inertia = new_inertia
    else:
        raise DataError(f"k-means did not converge in {max_iter} iterations (inertia {inertia:.4g})")
    return labels


def cluster_representatives(
    profiles: list[HouseholdProfile],
    clusters_per_zone: int = 20,
    target_n: int = 1000,
    seed: int = 0,
) -> list[HouseholdProfile]:
    """Pick target_n representative households, stratified by zone and by
    k-means cluster over normalized weekday load shapes, sampled in
    proportion to cluster size. Verifies the sample keeps the pooled
    hourly-load mean and std within 10% of the full set.
    """
    if target_n > len(profiles):
        raise ValueError(f"target_n {target_n} exceeds cohort size {len(profiles)}")
    rng = np.random.default_rng(seed)
    zones: dict[str, list[HouseholdProfile]] = {}
    for prof in sorted(profiles, key=lambda p: p.id):
        zones.setdefault(prof.climate_zone, []).append(prof)

    zone_names = sorted(zones)
    zone_sizes = np.array([len(zones[z]) for z in zone_names], dtype=float)
    zone_targets = _largest_remainder(zone_sizes / zone_sizes.sum() * target_n)

    chosen: list[HouseholdProfile] = []
    for zone, n_zone in zip(zone_names, zone_targets):
        members = zones[zone]
        if n_zone == 0:
            continue
        if n_zone >= len(members):
            chosen.extend(members)
            continue
        weekend = _weekend_mask(members[0].load.start, len(members[0].load))
        feats = np.array([_weekday_shape(p, weekend) for p in members])
        labels = _kmeans(feats, clusters_per_zone, rng)
        cluster_sizes = np.bincount(labels, minlength=labels.max() + 1).astype(float)
        takes = _largest_remainder(cluster_sizes / cluster_sizes.sum() * n_zone)
        for j, take in enumerate(takes):
            pool = [members[i] for i in np.flatnonzero(labels == j)]
            take = min(take, len(pool))
            picks = rng.choice(len(pool), size=take, replace=False)
            chosen.extend(pool[i] for i in sorted(picks))

    chosen.sort(key=lambda p: p.id)
    _check_coherence(profiles, chosen)
    return chosen


def _check_coherence(full: list[HouseholdProfile], sample: list[HouseholdProfile]) -> None:
    full_vals = np.concatenate([p.load.values for p in full])
    sample_vals = np.concatenate([p.load.values for p in sample])
    for name, f, s in (
        ("mean", full_vals.mean(), sample_vals.mean()),
        ("std", full_vals.std(), sample_vals.std()),
    ):
        if f > 0 and abs(s - f) / f > 0.10:
            raise DataError(
                f"representative sample {name} {s:.4f} deviates more than 10% "
                f"from the full set's {f:.4f}"
            )
