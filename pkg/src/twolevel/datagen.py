"""Hourly demand synthesis for five building archetypes.

Builds a year of electricity and heat demand from a pair of 24-hour base
days (one summer, one winter) per building: each weekday is the base day
scaled by a per-building weekly factor, each week blends the winter and
summer weeks through a piecewise-linear seasonal weight, and every hour is
perturbed by zero-mean Gaussian noise proportional to the demand magnitude.

The year is 52 whole weeks (8736 hours).  Bundled day shapes under
``twolevel/data/`` are synthetic curves drawn from a few knots per series;
callers may substitute their own CSVs with the same schema
(hour, season, elec_kwh, heat_kwh).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInstance

BUILDINGS = ("office", "supermarket", "restaurant", "hospital", "retail")

# Mon..Sun scaling of the base day, per building
WEEK_FACTORS = {
    "office": (1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.25),
    "supermarket": (0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 1.0),
    "restaurant": (0.25, 0.25, 0.5, 0.5, 1.0, 1.0, 0.5),
    "hospital": (1.0,) * 7,
    "retail": (0.25, 0.5, 0.5, 1.0, 1.0, 0.25, 0.25),
}
_ALLOWED_FACTORS = (1.0, 0.5, 0.25)

HOURS_PER_DAY = 24
HOURS_PER_WEEK = 168
WEEKS_PER_YEAR = 52
HOURS_PER_YEAR = HOURS_PER_WEEK * WEEKS_PER_YEAR

# weekly winter weight: flat 1 to week 13, down to 0 by 24, flat to 37,
# back to 1 by 44, flat to year end
SEASON_KNOT_WEEKS = (0.0, 13.0, 24.0, 37.0, 44.0, 52.0)
SEASON_KNOT_VALUES = (1.0, 1.0, 0.0, 0.0, 1.0, 1.0)

NOISE_SCALE = 0.02

# counter-based generator keyed by (seed, year): platform-stable streams
PRNG_ID = "numpy-philox4x64"
FIXTURE_VERSION = "synthetic-v1"


def _year_rng(seed, year):
    ss = np.random.SeedSequence(entropy=(int(seed), int(year)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class BuildingProfile:
    """Base summer/winter days plus the weekly scaling row for one building.

    ``summer_day`` and ``winter_day`` are (24, 2) arrays with columns
    (electricity kWh, heat kWh).
    """

    building: str
    summer_day: np.ndarray
    winter_day: np.ndarray
    week_factors: tuple

    def __post_init__(self):
        for name in ("summer_day", "winter_day"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (HOURS_PER_DAY, 2):
                raise InvalidInstance(
                    f"{name} must be (24, 2), got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidInstance(f"{name} has non-finite entries")
            if arr.min() < 0:
                raise InvalidInstance(f"{name} has negative demand")
            object.__setattr__(self, name, arr)
        factors = tuple(float(f) for f in self.week_factors)
        if len(factors) != 7:
            raise InvalidInstance("week_factors must have 7 entries")
        if any(f not in _ALLOWED_FACTORS for f in factors):
            raise InvalidInstance(
                f"week_factors must be among {_ALLOWED_FACTORS}, got {factors}"
            )
        object.__setattr__(self, "week_factors", factors)

    def day(self, season):
        if season == "summer":
            return self.summer_day
        if season == "winter":
            return self.winter_day
        raise InvalidInstance(f"unknown season {season!r}")

    @classmethod
    def from_csv(cls, path, building=None, week_factors=None):
        """Read a day-profile CSV (hour, season, elec_kwh, heat_kwh).

        ``building`` defaults to the file stem; ``week_factors`` defaults
        to the built-in table for that building.
        """
        path = Path(path)
        if building is None:
            building = path.stem
        days = {"summer": np.zeros((HOURS_PER_DAY, 2)),
                "winter": np.zeros((HOURS_PER_DAY, 2))}
        seen = {"summer": set(), "winter": set()}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                season = row["season"].strip()
                if season not in days:
                    raise InvalidInstance(f"unknown season {season!r} in {path}")
                h = int(row["hour"])
                if not 0 <= h < HOURS_PER_DAY:
                    raise InvalidInstance(f"hour {h} out of range in {path}")
                days[season][h, 0] = float(row["elec_kwh"])
                days[season][h, 1] = float(row["heat_kwh"])
                seen[season].add(h)
        for season, hours in seen.items():
            if len(hours) != HOURS_PER_DAY:
                raise InvalidInstance(
                    f"{path} is missing {season} hours: "
                    f"{sorted(set(range(HOURS_PER_DAY)) - hours)}"
                )
        if week_factors is None:
            try:
                week_factors = WEEK_FACTORS[building]
            except KeyError:
                raise InvalidInstance(
                    f"no weekly factors known for {building!r}; pass week_factors"
                ) from None
        return cls(building, days["summer"], days["winter"], week_factors)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hour", "season", "elec_kwh", "heat_kwh"])
            for season in ("summer", "winter"):
                day = self.day(season)
                for h in range(HOURS_PER_DAY):
                    w.writerow([h, season, repr(float(day[h, 0])),
                                repr(float(day[h, 1]))])


def load_building(name):
    """Load one of the bundled synthetic building profiles."""
    if name not in BUILDINGS:
        raise InvalidInstance(f"unknown building {name!r}; choose from {BUILDINGS}")
    ref = resources.files("twolevel").joinpath("data", f"{name}.csv")
    with resources.as_file(ref) as path:
        return BuildingProfile.from_csv(path, building=name)


@dataclass(frozen=True)
class SeasonWeights:
    """Weekly winter weight w_i in [0, 1] for weeks i = 1..52."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.shape != (WEEKS_PER_YEAR,):
            raise InvalidInstance(f"need {WEEKS_PER_YEAR} weights, got {w.shape}")
        if w.min() < 0 or w.max() > 1:
            raise InvalidInstance("season weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)

    @classmethod
    def default(cls):
        w = np.interp(np.arange(1, WEEKS_PER_YEAR + 1),
                      SEASON_KNOT_WEEKS, SEASON_KNOT_VALUES)
        return cls(w)


@dataclass(frozen=True)
class PricingSchedule:
    """Flat energy prices plus a seasonal monthly peak-demand charge."""

    elec_price: float = 0.12
    gas_price: float = 0.049
    peak_charge_summer: float = 14.2
    peak_charge_winter: float = 11.36
    summer_months: tuple = (6, 7, 8, 9)

    def __post_init__(self):
        for name in ("elec_price", "gas_price",
                     "peak_charge_summer", "peak_charge_winter"):
            if not float(getattr(self, name)) > 0:
                raise InvalidInstance(f"{name} must be positive")
        months = tuple(int(m) for m in self.summer_months)
        if not set(months) <= set(range(1, 13)) or len(set(months)) != len(months):
            raise InvalidInstance("summer_months must be distinct months 1..12")
        object.__setattr__(self, "summer_months", months)

    def peak_charge_for_month(self, month):
        if not 1 <= int(month) <= 12:
            raise InvalidInstance(f"month {month} out of range")
        if int(month) in self.summer_months:
            return self.peak_charge_summer
        return self.peak_charge_winter


def build_week(profile, season):
    """One week (168, 2) of demand: the base day scaled per weekday."""
    day = profile.day(season)
    return np.concatenate([day * f for f in profile.week_factors], axis=0)


def _blend_year(profile, weights):
    summer = build_week(profile, "summer")
    winter = build_week(profile, "winter")
    blocks = [w * winter + (1.0 - w) * summer for w in weights.weights]
    return np.concatenate(blocks, axis=0)


def _apply_noise(series, rng, noise_scale):
    noise = rng.standard_normal(series.shape) * noise_scale * np.abs(series)
    return np.maximum(series + noise, 0.0)


def build_year(profile, weights=None, noise_seed=0, noise_scale=NOISE_SCALE):
    """One 8736-hour year: seasonal blend plus proportional Gaussian noise.

    ``noise_scale=0`` reproduces the exact blend bitwise.  The noise stream
    is keyed by (noise_seed, 0), matching year 0 of ``build_multi_year``.
    """
    if weights is None:
        weights = SeasonWeights.default()
    year = _blend_year(profile, weights)
    if noise_scale:
        year = _apply_noise(year, _year_rng(noise_seed, 0), noise_scale)
    return year


def build_multi_year(profile, years, seed=0, weights=None,
                     noise_scale=NOISE_SCALE):
    """Concatenate ``years`` independently noised years, (8736*years, 2).

    Each year draws from its own (seed, year_index) stream, so any prefix
    of a longer run matches the shorter run exactly.
    """
    years = int(years)
    if years < 1:
        raise InvalidInstance(f"years must be >= 1, got {years}")
    if weights is None:
        weights = SeasonWeights.default()
    blend = _blend_year(profile, weights)
    out = []
    for y in range(years):
        if noise_scale:
            out.append(_apply_noise(blend, _year_rng(seed, y), noise_scale))
        else:
            out.append(blend)
    return np.concatenate(out, axis=0)


def save_demand_csv(path, series, building, seed=None, noise_scale=NOISE_SCALE):
    """Write an hourly demand CSV plus a .meta.json sidecar."""
    series = np.asarray(series, dtype=float)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "elec_kwh", "heat_kwh"])
        for h in range(series.shape[0]):
            w.writerow([h, repr(float(series[h, 0])), repr(float(series[h, 1]))])
    meta = {
        "format": "twolevel-demand",
        "building": building,
        "hours": int(series.shape[0]),
        "seed": None if seed is None else int(seed),
        "noise_scale": float(noise_scale),
        "prng": PRNG_ID,
        "fixture_version": FIXTURE_VERSION,
    }
    meta_path = path.with_suffix(".meta.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return meta_path


def load_demand_csv(path):
    """Read an hourly demand CSV; returns (series, metadata-or-None)."""
    path = Path(path)
    elec, heat = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            elec.append(float(row["elec_kwh"]))
            heat.append(float(row["heat_kwh"]))
    series = np.column_stack([elec, heat]) if elec else np.zeros((0, 2))
    meta_path = path.with_suffix(".meta.json")
    meta = None
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    return series, meta
