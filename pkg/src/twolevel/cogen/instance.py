"""Cogeneration problem data: technologies, horizon, demand, pricing.

Five technologies serve a building's electricity and heat demand over an
hourly horizon of whole days: batteries, boilers, power-only fuel cells,
combined heat-and-power fuel cells, and water tank storage.  First-stage
integers pick how many units of each to buy; the second stage schedules
them hour by hour.  Costs are discounted hourly and scaled by lifetime
over horizon so that horizons of different lengths are comparable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..datagen import (
    PricingSchedule,
    build_multi_year,
    load_building,
    load_demand_csv,
    save_demand_csv,
)
from ..errors import InvalidInstance

TECHS = ("batt", "boil", "pow", "chp", "stor")
GEN_TECHS = ("pow", "chp")

DELTA = 24  # hours per day; the daily profile length everywhere

HOURLY_DISCOUNT = 1.0 - 0.03 / 8760.0

# 364-day planning year (52 weeks); December absorbs the missing day
MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 30)


def default_month_structure(days):
    """Map day index -> global month index for a repeating 364-day year.

    Returns (month_of_day, month_in_year) where month_in_year gives each
    global month its 1..12 calendar position for seasonal pricing.
    """
    days = int(days)
    if days < 1:
        raise InvalidInstance(f"need at least one day, got {days}")
    bounds = np.cumsum(MONTH_DAYS)
    month_of_day = np.empty(days, dtype=int)
    month_in_year = []
    seen = -1
    for d in range(days):
        year, day_in_year = divmod(d, 364)
        m = int(np.searchsorted(bounds, day_in_year, side="right"))
        g = 12 * year + m
        if g != seen:
            month_in_year.append(m + 1)
            seen = g
        month_of_day[d] = len(month_in_year) - 1
    return month_of_day, np.array(month_in_year, dtype=int)


def _check_tech_map(name, mapping, keys):
    if set(mapping) != set(keys):
        raise InvalidInstance(f"{name} must have entries exactly for {keys}")
    return {k: float(mapping[k]) for k in keys}


@dataclass(frozen=True)
class CogenInstance:
    """Immutable parameter set for one cogeneration planning problem."""

    demand_elec: np.ndarray
    demand_heat: np.ndarray
    unit_caps: dict
    capital: dict
    maint: dict
    switch_cost: dict
    rmin: dict
    rmax: dict
    eff_p: dict
    eff_q: dict
    batt_cap: float
    stor_cap: float
    boil_cap: float
    loss_p: float
    loss_q: float
    lifetime_hours: float
    month_of_day: np.ndarray
    peak_charges: np.ndarray
    discount: float = HOURLY_DISCOUNT
    elec_price: float = 0.12
    gas_price: float = 0.049
    name: str = ""

    def __post_init__(self):
        de = np.ascontiguousarray(self.demand_elec, dtype=float)
        dh = np.ascontiguousarray(self.demand_heat, dtype=float)
        if de.ndim != 1 or de.shape != dh.shape:
            raise InvalidInstance("demand series must be equal-length vectors")
        if de.size == 0 or de.size % DELTA:
            raise InvalidInstance(
                f"horizon must be a positive multiple of {DELTA} hours, got {de.size}"
            )
        if de.min() < 0 or dh.min() < 0 or not (
            np.all(np.isfinite(de)) and np.all(np.isfinite(dh))
        ):
            raise InvalidInstance("demands must be finite and non-negative")
        object.__setattr__(self, "demand_elec", de)
        object.__setattr__(self, "demand_heat", dh)

        caps = _check_tech_map("unit_caps", self.unit_caps, TECHS)
        caps = {k: int(v) for k, v in caps.items()}
        if min(caps.values()) < 1:
            raise InvalidInstance("every unit cap must be >= 1")
        object.__setattr__(self, "unit_caps", caps)
        object.__setattr__(
            self, "capital", _check_tech_map("capital", self.capital, TECHS)
        )
        for nm in ("maint", "switch_cost", "rmin", "rmax", "eff_p", "eff_q"):
            object.__setattr__(
                self, nm, _check_tech_map(nm, getattr(self, nm), GEN_TECHS)
            )
        for j in GEN_TECHS:
            if not 0 <= self.rmin[j] <= self.rmax[j]:
                raise InvalidInstance(
                    f"need 0 <= rmin <= rmax for {j}, got "
                    f"[{self.rmin[j]}, {self.rmax[j]}]"
                )
            if self.eff_p[j] <= 0:
                raise InvalidInstance(f"eff_p[{j}] must be positive")
        for nm in ("batt_cap", "stor_cap", "boil_cap"):
            if not float(getattr(self, nm)) > 0:
                raise InvalidInstance(f"{nm} must be positive")
        for nm in ("loss_p", "loss_q"):
            if not 0 <= float(getattr(self, nm)) < 1:
                raise InvalidInstance(f"{nm} must lie in [0, 1)")
        if not 0 < self.discount < 1:
            raise InvalidInstance("discount must lie in (0, 1)")
        if not self.lifetime_hours > 0:
            raise InvalidInstance("lifetime_hours must be positive")

        mod = np.ascontiguousarray(self.month_of_day, dtype=int)
        if mod.shape != (self.days,):
            raise InvalidInstance(
                f"month_of_day must have one entry per day ({self.days})"
            )
        pk = np.ascontiguousarray(self.peak_charges, dtype=float)
        n_months = pk.size
        if np.any(np.diff(mod) < 0) or mod[0] != 0 or (
            n_months and mod[-1] != n_months - 1
        ) or len(np.unique(mod)) != n_months:
            raise InvalidInstance(
                "month_of_day must start at 0, be non-decreasing, and use "
                "every month index up to len(peak_charges) - 1"
            )
        if n_months == 0 or pk.min() <= 0:
            raise InvalidInstance("peak_charges must be positive, one per month")
        object.__setattr__(self, "month_of_day", mod)
        object.__setattr__(self, "peak_charges", pk)

    # ------------------------------------------------------------ derived

    @property
    def T(self) -> int:
        return int(self.demand_elec.size)

    @property
    def days(self) -> int:
        return self.T // DELTA

    @property
    def n_months(self) -> int:
        return int(self.peak_charges.size)

    @property
    def chp_heat_ratio(self) -> float:
        return self.eff_q["chp"] / self.eff_p["chp"]

    @property
    def cost_scale(self) -> float:
        """Lifetime over horizon: second-stage costs count H/T times."""
        return self.lifetime_hours / self.T

    def month_of_hour(self) -> np.ndarray:
        return self.month_of_day[np.arange(self.T) // DELTA]

    def month_last_hour(self) -> np.ndarray:
        """1-based hour t_m at which month m's peak charge is discounted."""
        last = np.zeros(self.n_months, dtype=int)
        for d, m in enumerate(self.month_of_day):
            last[m] = (d + 1) * DELTA
        return last

    def hourly_discounts(self) -> np.ndarray:
        """Y^t for t = 1..T."""
        return self.discount ** np.arange(1, self.T + 1, dtype=float)

    def day_demand(self, d, kind="elec") -> np.ndarray:
        series = self.demand_elec if kind == "elec" else self.demand_heat
        return series[d * DELTA:(d + 1) * DELTA]

    # ------------------------------------------------------------- slicing

    def slice_days(self, start, stop) -> "CogenInstance":
        """Sub-instance for days [start, stop): demand and months sliced.

        Months are renumbered locally; discounting restarts at the window
        (schedules, not objective values, are what window solves feed on).
        """
        start, stop = int(start), int(stop)
        if not 0 <= start < stop <= self.days:
            raise InvalidInstance(
                f"day range [{start}, {stop}) outside horizon of {self.days}"
            )
        mod = self.month_of_day[start:stop]
        keep, local = np.unique(mod, return_inverse=True)
        return replace(
            self,
            demand_elec=self.demand_elec[start * DELTA:stop * DELTA],
            demand_heat=self.demand_heat[start * DELTA:stop * DELTA],
            month_of_day=local,
            peak_charges=self.peak_charges[keep],
            name=f"{self.name}[{start}:{stop}]" if self.name else "",
        )

    # ----------------------------------------------------------------- io

    def to_json_dict(self) -> dict:
        return {
            "format": "twolevel-cogen-instance",
            "version": 1,
            "name": self.name,
            "days": self.days,
            "unit_caps": self.unit_caps,
            "capital": self.capital,
            "maint": self.maint,
            "switch_cost": self.switch_cost,
            "rmin": self.rmin,
            "rmax": self.rmax,
            "eff_p": self.eff_p,
            "eff_q": self.eff_q,
            "batt_cap": self.batt_cap,
            "stor_cap": self.stor_cap,
            "boil_cap": self.boil_cap,
            "loss_p": self.loss_p,
            "loss_q": self.loss_q,
            "lifetime_hours": self.lifetime_hours,
            "discount": self.discount,
            "elec_price": self.elec_price,
            "gas_price": self.gas_price,
            "month_of_day": self.month_of_day.tolist(),
            "peak_charges": self.peak_charges.tolist(),
        }


def save_instance(instance: CogenInstance, prefix) -> None:
    """Write <prefix>.json (parameters) and <prefix>.demand.csv (series)."""
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(instance.to_json_dict(), fh, indent=2)
        fh.write("\n")
    series = np.column_stack([instance.demand_elec, instance.demand_heat])
    save_demand_csv(
        prefix.parent / (prefix.name + ".demand.csv"), series,
        instance.name or "instance",
    )


def load_instance(prefix) -> CogenInstance:
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json")) as fh:
        doc = json.load(fh)
    if doc.get("format") != "twolevel-cogen-instance":
        raise InvalidInstance(f"not a cogeneration instance file: {prefix}")
    series, _ = load_demand_csv(prefix.parent / (prefix.name + ".demand.csv"))
    return CogenInstance(
        demand_elec=series[:, 0],
        demand_heat=series[:, 1],
        unit_caps=doc["unit_caps"],
        capital=doc["capital"],
        maint=doc["maint"],
        switch_cost=doc["switch_cost"],
        rmin=doc["rmin"],
        rmax=doc["rmax"],
        eff_p=doc["eff_p"],
        eff_q=doc["eff_q"],
        batt_cap=doc["batt_cap"],
        stor_cap=doc["stor_cap"],
        boil_cap=doc["boil_cap"],
        loss_p=doc["loss_p"],
        loss_q=doc["loss_q"],
        lifetime_hours=doc["lifetime_hours"],
        month_of_day=np.asarray(doc["month_of_day"], dtype=int),
        peak_charges=np.asarray(doc["peak_charges"], dtype=float),
        discount=doc["discount"],
        elec_price=doc["elec_price"],
        gas_price=doc["gas_price"],
        name=doc.get("name", ""),
    )


# ------------------------------------------------------------ generators

def _instance_from_demand(demand, name, n_units, lifetime_years, pricing):
    pricing = pricing or PricingSchedule()
    days = demand.shape[0] // DELTA
    month_of_day, month_in_year = default_month_structure(days)
    peak_charges = np.array(
        [pricing.peak_charge_for_month(m) for m in month_in_year]
    )
    de = demand[:, 0]
    dh = demand[:, 1]
    peak_e = float(de.max())
    peak_h = float(dh.max())
    if peak_e <= 0 or peak_h <= 0:
        raise InvalidInstance("demand series never positive; nothing to plan")
    rmax = peak_e / 3.0
    return CogenInstance(
        demand_elec=de,
        demand_heat=dh,
        unit_caps={"batt": 8, "boil": 6, "pow": n_units, "chp": n_units,
                   "stor": 8},
        capital={
            "batt": 150.0 * round(0.5 * peak_e),
            "boil": 25.0 * round(0.6 * peak_h),
            "pow": 1200.0 * rmax,
            "chp": 1500.0 * rmax,
            "stor": 30.0 * round(0.75 * peak_h),
        },
        maint={"pow": 0.065, "chp": 0.075},
        switch_cost={"pow": 10.0, "chp": 10.0},
        rmin={"pow": 0.25 * rmax, "chp": 0.25 * rmax},
        rmax={"pow": rmax, "chp": rmax},
        eff_p={"pow": 0.50, "chp": 0.45},
        eff_q={"pow": 0.0, "chp": 0.40},
        batt_cap=float(round(0.5 * peak_e)),
        stor_cap=float(round(0.75 * peak_h)),
        boil_cap=float(round(0.6 * peak_h)),
        loss_p=0.01,
        loss_q=0.02,
        lifetime_hours=lifetime_years * 8760.0,
        month_of_day=month_of_day,
        peak_charges=peak_charges,
        elec_price=pricing.elec_price,
        gas_price=pricing.gas_price,
        name=name,
    )


def _demand_for_days(building, days, seed):
    profile = load_building(building)
    hours = days * DELTA
    years = max(1, math.ceil(hours / (52 * 168)))
    return build_multi_year(profile, years, seed=seed)[:hours]


def make_desk_instance(building="restaurant", days=7, n_units=3, seed=0,
                       lifetime_years=10, pricing=None) -> CogenInstance:
    """Small instance sized for interactive solves (few generation units)."""
    demand = _demand_for_days(building, days, seed)
    return _instance_from_demand(
        demand, f"{building}-{days}d", n_units, lifetime_years, pricing
    )


def make_paper_instance(building="restaurant", days=3650, n_units=6, seed=0,
                        lifetime_years=10, pricing=None) -> CogenInstance:
    """Benchmark-scale instance: 6+6 generation units, multi-year horizon."""
    demand = _demand_for_days(building, days, seed)
    return _instance_from_demand(
        demand, f"{building}-{days}d", n_units, lifetime_years, pricing
    )
