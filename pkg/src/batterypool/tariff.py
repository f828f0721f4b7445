"""Seasonal time-of-use tariffs and calendar helpers.

A tariff is a set of seasons (month/day ranges that partition the year),
each with an off-peak and a peak $/kWh purchase price, a daily peak-hour
window, and a constant injection price for exported energy. Weekends and
holidays can be billed entirely at the off-peak rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path

import numpy as np

from batterypool.errors import ConfigurationError
from batterypool.series import HOUR, PRICE, HourlySeries

WEEKDAY = "weekday"
WEEKEND = "weekend"


def fixed_date_federal_holidays(year: int) -> frozenset[date]:
    """US federal holidays that fall on a fixed calendar date."""
    return frozenset(
        {
            date(year, 1, 1),    # New Year's Day
            date(year, 6, 19),   # Juneteenth
            date(year, 7, 4),    # Independence Day
            date(year, 11, 11),  # Veterans Day
            date(year, 12, 25),  # Christmas Day
        }
    )


@dataclass(frozen=True)
class SeasonRate:
    """Price pair over an inclusive month/day range (may wrap year end)."""

    name: str
    start: tuple[int, int]
    end: tuple[int, int]
    off_peak: float
    peak: float

    def __post_init__(self) -> None:
        for month, day in (self.start, self.end):
            date(2020, month, day)  # validates month/day (2020 is a leap year)
        if self.off_peak < 0 or self.peak < 0:
            raise ConfigurationError(f"season {self.name!r}: prices must be >= 0")
        if self.peak < self.off_peak:
            raise ConfigurationError(
                f"season {self.name!r}: peak price {self.peak} < off-peak {self.off_peak}"
            )

    def contains(self, d: date) -> bool:
        key = (d.month, d.day)
        if self.start <= self.end:
            return self.start <= key <= self.end
        return key >= self.start or key <= self.end


@dataclass(frozen=True)
class Tariff:
    """Seasonal TOU purchase prices plus a constant injection price."""

    seasons: tuple[SeasonRate, ...]
    peak_start: int = 16
    peak_end: int = 21
    weekend_holiday_flat: bool = True
    injection_price: float = 0.0
    holidays: frozenset[date] | None = None  # None: fixed-date federal holidays

    def __post_init__(self) -> None:
        object.__setattr__(self, "seasons", tuple(self.seasons))
        if not self.seasons:
            raise ConfigurationError("tariff needs at least one season")
        if not (0 <= self.peak_start < self.peak_end <= 24):
            raise ConfigurationError(
                f"peak window [{self.peak_start}, {self.peak_end}) is not a valid hour range"
            )
        if self.injection_price < 0:
            raise ConfigurationError("injection price must be >= 0")
        min_purchase = min(s.off_peak for s in self.seasons)
        if self.injection_price > min_purchase:
            raise ConfigurationError(
                "injection price exceeds the lowest purchase price, "
                "buying must never pay less than selling"
            )
        # Seasons must cover every calendar day exactly once (leap year probe
        # so Feb 29 is checked too).
        probe = date(2020, 1, 1)
        while probe.year == 2020:
            hits = [s.name for s in self.seasons if s.contains(probe)]
            if len(hits) == 0:
                raise ConfigurationError(f"no season covers {probe.month:02d}-{probe.day:02d}")
            if len(hits) > 1:
                raise ConfigurationError(
                    f"seasons {hits} overlap on {probe.month:02d}-{probe.day:02d}"
                )
            probe = probe.fromordinal(probe.toordinal() + 1)

    def season_at(self, d: date) -> SeasonRate:
        for season in self.seasons:
            if season.contains(d):
                return season
        raise ConfigurationError(f"no season covers {d}")  # unreachable after validation

    def holiday_set(self, years: set[int]) -> frozenset[date]:
        if self.holidays is not None:
            return self.holidays
        out: set[date] = set()
        for year in years:
            out |= fixed_date_federal_holidays(year)
        return frozenset(out)


def day_type(d: date, holidays: frozenset[date]) -> str:
    return WEEKEND if d.weekday() >= 5 or d in holidays else WEEKDAY


def expand_tariff(
    tariff: Tariff, start: datetime, hours: int
) -> tuple[HourlySeries, HourlySeries]:
    """Per-hour purchase and injection price vectors over [start, start+hours)."""
    if hours < 1:
        raise ConfigurationError("hours must be >= 1")
    years = {(start + t * HOUR).year for t in (0, hours - 1)}
    years |= {y for y in range(min(years), max(years) + 1)}
    holidays = tariff.holiday_set(years)

    purchase = np.empty(hours)
    ts = start
    cached_day: date | None = None
    season = tariff.seasons[0]
    flat = False
    for t in range(hours):
        d = ts.date()
        if d != cached_day:
            season = tariff.season_at(d)
            flat = tariff.weekend_holiday_flat and day_type(d, holidays) == WEEKEND
            cached_day = d
        in_peak = tariff.peak_start <= ts.hour < tariff.peak_end
        purchase[t] = season.peak if (in_peak and not flat) else season.off_peak
        ts += HOUR
    injection = np.full(hours, tariff.injection_price)
    return (
        HourlySeries(start, purchase, PRICE),
        HourlySeries(start, injection, PRICE),
    )


@dataclass(frozen=True)
class SliceCalendar:
    """Per-hour season and day-type labels, for slicing statistics."""

    start: datetime
    seasons: tuple[str, ...]
    day_types: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.seasons)


def build_calendar(tariff: Tariff, start: datetime, hours: int) -> SliceCalendar:
    years = {(start + t * HOUR).year for t in (0, hours - 1)}
    years |= {y for y in range(min(years), max(years) + 1)}
    holidays = tariff.holiday_set(years)
    seasons = []
    dtypes = []
    ts = start
    for _ in range(hours):
        d = ts.date()
        seasons.append(tariff.season_at(d).name)
        dtypes.append(day_type(d, holidays))
        ts += HOUR
    return SliceCalendar(start, tuple(seasons), tuple(dtypes))


# --- JSON interchange (schema documented in docs/formats.md) ---

def _parse_monthday(text: str) -> tuple[int, int]:
    try:
        month, day = text.split("-")
        return int(month), int(day)
    except ValueError as exc:
        raise ConfigurationError(f"bad month-day {text!r}, expected 'MM-DD'") from exc


def tariff_from_dict(raw: dict) -> Tariff:
    try:
        seasons = tuple(
            SeasonRate(
                name=s["name"],
                start=_parse_monthday(s["start"]),
                end=_parse_monthday(s["end"]),
                off_peak=float(s["off_peak"]),
                peak=float(s["peak"]),
            )
            for s in raw["seasons"]
        )
        peak_hours = raw.get("peak_hours", [16, 21])
        holidays_raw = raw.get("holidays")
        holidays = (
            frozenset(date.fromisoformat(h) for h in holidays_raw)
            if holidays_raw is not None
            else None
        )
        return Tariff(
            seasons=seasons,
            peak_start=int(peak_hours[0]),
            peak_end=int(peak_hours[1]),
            weekend_holiday_flat=bool(raw.get("weekend_holiday_flat", True)),
            injection_price=float(raw.get("injection_price", 0.0)),
            holidays=holidays,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"invalid tariff definition: {exc}") from exc


def tariff_from_json(path: str | Path) -> Tariff:
    with open(path) as fh:
        return tariff_from_dict(json.load(fh))


def pge_etou_b(holidays: frozenset[date] | None = None) -> Tariff:
    """PG&E E-TOU Option B: summer/winter seasons, 4pm-9pm peak window."""
    return Tariff(
        seasons=(
            SeasonRate("summer", (6, 1), (9, 30), off_peak=0.25511, peak=0.35817),
            SeasonRate("winter", (10, 1), (5, 31), off_peak=0.20191, peak=0.22071),
        ),
        peak_start=16,
        peak_end=21,
        weekend_holiday_flat=True,
        injection_price=0.0,
        holidays=holidays,
    )
