"""Hour-resolution cogeneration MILP: builder, solver, cost accounting.

The builder is fully vectorized so that multi-year horizons (millions of
rows) assemble in seconds.  Variables and rows are located through
layout objects rather than name strings; names are synthesized on demand
by the describe helpers instead of being materialized per row.

End-of-horizon closure: the battery and heat-storage dynamics are
completed cyclically (the last hour wraps to the first, matching the
cyclic level boundaries).  Without the wrap rows, the input/output
variables of the final hour escape the dynamics entirely and act as a
free energy source, which would also leak into any day profiles
extracted from solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import backend as bk
from ..errors import CogenError, HorizonMismatch, InvalidInstance
from ..milp import MilpModel
from ..twostage import TwoStageMilp
from .instance import DELTA, GEN_TECHS, TECHS, CogenInstance


class FullLayout:
    """Column offsets for the full model; index helpers take arrays too."""

    def __init__(self, instance: CogenInstance):
        T = instance.T
        self.T = T
        self.n_units = {j: instance.unit_caps[j] for j in GEN_TECHS}
        self.n_months = instance.n_months
        n = 0
        self.y0 = n
        n += len(TECHS)
        self.umax0 = n
        n += self.n_months
        self.x0 = {}
        for j in GEN_TECHS:
            self.x0[j] = n
            n += self.n_units[j] * T
        self.pi0 = {}
        for j in GEN_TECHS:
            self.pi0[j] = n
            n += self.n_units[j] * T
        self.p0 = {}
        for j in GEN_TECHS:
            self.p0[j] = n
            n += T
        self.w0 = {}
        for j in GEN_TECHS:
            self.w0[j] = n
            n += self.n_units[j] * (T - 1)
        self.u0 = n
        n += T
        self.b0 = n
        n += T
        self.bio0 = n
        n += T
        self.s0 = n
        n += T
        self.sout0 = n
        n += T
        self.q0 = n
        n += T
        self.n_vars = n

    def y(self, tech):
        return self.y0 + TECHS.index(tech)

    def umax(self, m):
        return self.umax0 + m

    def x(self, j, i, t):
        return self.x0[j] + i * self.T + t

    def pi(self, j, i, t):
        return self.pi0[j] + i * self.T + t

    def p(self, j, t):
        return self.p0[j] + t

    def w(self, j, i, t):
        return self.w0[j] + i * (self.T - 1) + t

    def u(self, t):
        return self.u0 + t

    def b(self, t):
        return self.b0 + t

    def bio(self, t):
        return self.bio0 + t

    def s(self, t):
        return self.s0 + t

    def sout(self, t):
        return self.sout0 + t

    def q(self, t):
        return self.q0 + t

    def describe_var(self, idx) -> str:
        idx = int(idx)
        if idx < self.umax0:
            return f"y[{TECHS[idx - self.y0]}]"
        if idx < self.umax0 + self.n_months:
            return f"umax[{idx - self.umax0}]"
        for fam, base in (("x", self.x0), ("pi", self.pi0)):
            for j in GEN_TECHS:
                lo = base[j]
                if lo <= idx < lo + self.n_units[j] * self.T:
                    i, t = divmod(idx - lo, self.T)
                    return f"{fam}[{j},{i},{t}]"
        for j in GEN_TECHS:
            if self.p0[j] <= idx < self.p0[j] + self.T:
                return f"p[{j},{idx - self.p0[j]}]"
        for j in GEN_TECHS:
            lo = self.w0[j]
            if lo <= idx < lo + self.n_units[j] * (self.T - 1):
                i, t = divmod(idx - lo, self.T - 1)
                return f"w[{j},{i},{t}]"
        for fam, lo in (("u", self.u0), ("b", self.b0), ("bio", self.bio0),
                        ("s", self.s0), ("sout", self.sout0), ("q", self.q0)):
            if lo <= idx < lo + self.T:
                return f"{fam}[{idx - lo}]"
        raise IndexError(f"variable index {idx} out of range")


class RowStack:
    """Append-only sparse row builder with named families."""

    def __init__(self):
        self._data = []
        self._rows = []
        self._cols = []
        self._lb = []
        self._ub = []
        self.families = []  # (name, start, count)
        self.n_rows = 0

    def family(self, name, count, lb, ub) -> int:
        count = int(count)
        start = self.n_rows
        self.families.append((name, start, count))
        self._lb.append(np.broadcast_to(
            np.asarray(lb, dtype=float), (count,)))
        self._ub.append(np.broadcast_to(
            np.asarray(ub, dtype=float), (count,)))
        self.n_rows += count
        return start

    def put(self, rows, cols, vals) -> None:
        rows, cols, vals = np.broadcast_arrays(
            np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float)
        )
        self._rows.append(rows.astype(np.int32, copy=False).ravel())
        self._cols.append(cols.astype(np.int32, copy=False).ravel())
        self._data.append(vals.ravel())

    def matrix(self, n_vars) -> sp.csr_matrix:
        coo = sp.coo_matrix(
            (np.concatenate(self._data),
             (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=(self.n_rows, n_vars),
        )
        return coo.tocsr()

    def row_lb(self) -> np.ndarray:
        return np.concatenate(self._lb)

    def row_ub(self) -> np.ndarray:
        return np.concatenate(self._ub)

    def describe_row(self, idx) -> str:
        idx = int(idx)
        for name, start, count in self.families:
            if start <= idx < start + count:
                return f"{name}[{idx - start}]"
        raise IndexError(f"row index {idx} out of range")


@dataclass(frozen=True)
class CogenFullModel:
    instance: CogenInstance
    milp: MilpModel
    layout: FullLayout
    rows: RowStack

    def size_summary(self) -> dict:
        lay = self.layout
        binary = sum(lay.n_units[j] * lay.T for j in GEN_TECHS)
        return {
            "binary": binary,
            "integer": len(TECHS),
            "continuous": lay.n_vars - binary - len(TECHS),
            "rows": self.milp.num_rows,
        }

    def describe_var(self, idx) -> str:
        return self.layout.describe_var(idx)

    def describe_row(self, idx) -> str:
        return self.rows.describe_row(idx)

    def family_rows(self, name) -> range:
        for fam, start, count in self.rows.families:
            if fam == name:
                return range(start, start + count)
        raise KeyError(f"no row family named {name!r}")

    def solution_from_vector(self, z) -> "CogenSolution":
        lay = self.layout
        z = np.asarray(z, dtype=float)
        if z.size != lay.n_vars:
            raise HorizonMismatch(
                f"solution vector has {z.size} entries, model has {lay.n_vars}"
            )
        T = lay.T

        def block(lo, count):
            return z[lo:lo + count].copy()

        y = {j: int(round(z[lay.y(j)])) for j in TECHS}
        x = {}
        p_unit = {}
        p = {}
        w = {}
        for j in GEN_TECHS:
            nj = lay.n_units[j]
            x[j] = np.rint(block(lay.x0[j], nj * T)).reshape(nj, T)
            p_unit[j] = block(lay.pi0[j], nj * T).reshape(nj, T)
            p[j] = block(lay.p0[j], T)
            w[j] = block(lay.w0[j], nj * (T - 1)).reshape(nj, T - 1)
        return CogenSolution(
            y=y,
            umax=block(lay.umax0, lay.n_months),
            x=x,
            p_unit=p_unit,
            p=p,
            w=w,
            u=block(lay.u0, T),
            b=block(lay.b0, T),
            bio=block(lay.bio0, T),
            s=block(lay.s0, T),
            sout=block(lay.sout0, T),
            q=block(lay.q0, T),
            objective=self.milp.objective_value(z),
        )


@dataclass
class CogenSolution:
    """First-stage counts plus hourly schedules for one instance."""

    y: dict
    umax: np.ndarray
    x: dict       # tech -> (units, T) on/off
    p_unit: dict  # tech -> (units, T) production per unit
    p: dict       # tech -> (T,) production per technology
    w: dict       # tech -> (units, T-1) switch indicators
    u: np.ndarray
    b: np.ndarray
    bio: np.ndarray
    s: np.ndarray
    sout: np.ndarray
    q: np.ndarray
    objective: float
    breakdown: dict = field(default=None)

    @property
    def first_stage(self):
        """(Bat, Boil, Chp, Pow, Stor) unit counts."""
        return (self.y["batt"], self.y["boil"], self.y["chp"],
                self.y["pow"], self.y["stor"])


def build_full(instance: CogenInstance) -> CogenFullModel:
    """Assemble the hourly MILP for one instance."""
    lay = FullLayout(instance)
    T = lay.T
    t = np.arange(T)
    td = np.arange(T - 1)
    stack = RowStack()

    r0 = stack.family("pdem", T, instance.demand_elec, np.inf)
    stack.put(r0 + t, lay.p("pow", t), 1.0)
    stack.put(r0 + t, lay.p("chp", t), 1.0)
    stack.put(r0 + t, lay.u(t), 1.0)
    stack.put(r0 + t, lay.bio(t), -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        it = np.arange(nj * T)  # unit-major (i, t) index, matches layout
        r0 = stack.family(f"pgen_lo[{j}]", nj * T, -np.inf, 0.0)
        stack.put(r0 + it, lay.x0[j] + it, instance.rmin[j])
        stack.put(r0 + it, lay.pi0[j] + it, -1.0)
        r0 = stack.family(f"pgen_hi[{j}]", nj * T, -np.inf, 0.0)
        stack.put(r0 + it, lay.pi0[j] + it, 1.0)
        stack.put(r0 + it, lay.x0[j] + it, -instance.rmax[j])

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        it = np.arange(nj * T)
        r0 = stack.family(f"pdef[{j}]", T, 0.0, 0.0)
        stack.put(r0 + t, lay.p(j, t), 1.0)
        stack.put(r0 + it % T, lay.pi0[j] + it, -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        it = np.arange(nj * T)
        r0 = stack.family(f"onoff[{j}]", T, -np.inf, 0.0)
        stack.put(r0 + it % T, lay.x0[j] + it, 1.0)
        stack.put(r0 + t, lay.y(j), -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        if nj < 2:
            continue
        it = np.arange((nj - 1) * T)
        r0 = stack.family(f"symbrk[{j}]", (nj - 1) * T, -np.inf, 0.0)
        stack.put(r0 + it, lay.x0[j] + T + it, 1.0)   # unit i+1
        stack.put(r0 + it, lay.x0[j] + it, -1.0)      # unit i

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        iw = np.arange(nj * (T - 1))
        ix = (iw // (T - 1)) * T + iw % (T - 1)
        r0 = stack.family(f"swup[{j}]", nj * (T - 1), -np.inf, 0.0)
        stack.put(r0 + iw, lay.x0[j] + ix + 1, 1.0)
        stack.put(r0 + iw, lay.x0[j] + ix, -1.0)
        stack.put(r0 + iw, lay.w0[j] + iw, -1.0)
        r0 = stack.family(f"swdn[{j}]", nj * (T - 1), -np.inf, 0.0)
        stack.put(r0 + iw, lay.x0[j] + ix, 1.0)
        stack.put(r0 + iw, lay.x0[j] + ix + 1, -1.0)
        stack.put(r0 + iw, lay.w0[j] + iw, -1.0)

    r0 = stack.family("peak", T, -np.inf, 0.0)
    stack.put(r0 + t, lay.u(t), 1.0)
    stack.put(r0 + t, lay.umax0 + instance.month_of_hour(), -1.0)

    keep_p = 1.0 - instance.loss_p
    r0 = stack.family("bdyn", T - 1, 0.0, 0.0)
    stack.put(r0 + td, lay.b(td + 1), 1.0)
    stack.put(r0 + td, lay.b(td), -keep_p)
    stack.put(r0 + td, lay.bio(td), -1.0)
    r0 = stack.family("bwrap", 1, 0.0, 0.0)
    stack.put(r0, lay.b(0), 1.0)
    stack.put(r0, lay.b(T - 1), -keep_p)
    stack.put(r0, lay.bio(T - 1), -1.0)
    r0 = stack.family("bcyc", 1, 0.0, 0.0)
    stack.put(r0, lay.b(0), 1.0)
    stack.put(r0, lay.b(T - 1), -1.0)
    r0 = stack.family("bcap", T, -np.inf, 0.0)
    stack.put(r0 + t, lay.b(t), 1.0)
    stack.put(r0 + t, lay.y("batt"), -instance.batt_cap)

    r0 = stack.family("hdem", T, instance.demand_heat, np.inf)
    stack.put(r0 + t, lay.sout(t), 1.0)
    stack.put(r0 + t, lay.q(t), 1.0)

    keep_q = 1.0 - instance.loss_q
    ratio = instance.chp_heat_ratio
    r0 = stack.family("sdyn", T - 1, -np.inf, 0.0)
    stack.put(r0 + td, lay.s(td + 1), 1.0)
    stack.put(r0 + td, lay.s(td), -keep_q)
    stack.put(r0 + td, lay.sout(td), 1.0)
    stack.put(r0 + td, lay.p("chp", td), -ratio)
    r0 = stack.family("swrap", 1, -np.inf, 0.0)
    stack.put(r0, lay.s(0), 1.0)
    stack.put(r0, lay.s(T - 1), -keep_q)
    stack.put(r0, lay.sout(T - 1), 1.0)
    stack.put(r0, lay.p("chp", T - 1), -ratio)
    r0 = stack.family("scyc", 1, 0.0, 0.0)
    stack.put(r0, lay.s(0), 1.0)
    stack.put(r0, lay.s(T - 1), -1.0)
    r0 = stack.family("sbnd", T, -np.inf, 0.0)
    stack.put(r0 + t, lay.sout(t), 1.0)
    stack.put(r0 + t, lay.s(t), -1.0)
    r0 = stack.family("scap", T, -np.inf, 0.0)
    stack.put(r0 + t, lay.s(t), 1.0)
    stack.put(r0 + t, lay.y("stor"), -instance.stor_cap)
    r0 = stack.family("qcap", T, -np.inf, 0.0)
    stack.put(r0 + t, lay.q(t), 1.0)
    stack.put(r0 + t, lay.y("boil"), -instance.boil_cap)

    obj = np.zeros(lay.n_vars)
    for j in TECHS:
        obj[lay.y(j)] = instance.capital[j]
    scale = instance.cost_scale
    disc = instance.hourly_discounts()
    obj[lay.umax0:lay.umax0 + lay.n_months] = scale * (
        instance.discount ** instance.month_last_hour().astype(float)
        * instance.peak_charges
    )
    for j in GEN_TECHS:
        nj = lay.n_units[j]
        obj[lay.p0[j]:lay.p0[j] + T] = scale * instance.maint[j] * disc
        obj[lay.w0[j]:lay.w0[j] + nj * (T - 1)] = np.tile(
            scale * instance.switch_cost[j] * disc[:T - 1], nj
        )
    obj[lay.u0:lay.u0 + T] = scale * instance.elec_price * disc
    obj[lay.q0:lay.q0 + T] = scale * instance.gas_price * disc

    lb = np.zeros(lay.n_vars)
    ub = np.full(lay.n_vars, np.inf)
    integrality = np.zeros(lay.n_vars, dtype=np.int8)
    for j in TECHS:
        ub[lay.y(j)] = instance.unit_caps[j]
        integrality[lay.y(j)] = 1
    for j in GEN_TECHS:
        nj = lay.n_units[j]
        ub[lay.x0[j]:lay.x0[j] + nj * T] = 1.0
        integrality[lay.x0[j]:lay.x0[j] + nj * T] = 1
        ub[lay.w0[j]:lay.w0[j] + nj * (T - 1)] = 1.0
    lb[lay.bio0:lay.bio0 + T] = -np.inf

    milp = MilpModel(
        obj=obj,
        A=stack.matrix(lay.n_vars),
        row_lb=stack.row_lb(),
        row_ub=stack.row_ub(),
        lb=lb,
        ub=ub,
        integrality=integrality,
    )
    return CogenFullModel(instance=instance, milp=milp, layout=lay, rows=stack)


def solve_full(full: CogenFullModel, settings=None, backend=None):
    """Solve the hourly MILP; returns (CogenSolution, SolveOutcome)."""
    backend = backend or bk.get_backend()
    out = backend.solve_milp(full.milp, settings or bk.desk_settings())
    if not out.ok:
        raise CogenError(
            f"full model solve failed with status {out.status}: {out.message}"
        )
    solution = full.solution_from_vector(out.x)
    solution.breakdown = evaluate_cost(full.instance, solution)
    return solution, out


def evaluate_cost(instance: CogenInstance, solution: CogenSolution) -> dict:
    """Recompute each discounted cost component from the schedules.

    Independent of the solver's reported objective; the components must
    sum to it (to tolerance) for any feasible solution.
    """
    T = instance.T
    for name, arr in (("u", solution.u), ("b", solution.b),
                      ("bio", solution.bio), ("s", solution.s),
                      ("sout", solution.sout), ("q", solution.q)):
        if arr.shape != (T,):
            raise HorizonMismatch(
                f"schedule {name} has shape {arr.shape}, expected ({T},)"
            )
    for j in GEN_TECHS:
        if solution.p[j].shape != (T,) or solution.w[j].shape[1] != T - 1:
            raise HorizonMismatch(f"schedules for {j} do not match horizon {T}")
    if solution.umax.shape != (instance.n_months,):
        raise HorizonMismatch(
            f"umax has {solution.umax.size} entries, expected {instance.n_months}"
        )
    scale = instance.cost_scale
    disc = instance.hourly_discounts()
    capital = sum(instance.capital[j] * solution.y[j] for j in TECHS)
    peak = scale * float(
        (instance.discount ** instance.month_last_hour().astype(float))
        @ (instance.peak_charges * solution.umax)
    )
    maintenance = scale * sum(
        instance.maint[j] * float(disc @ solution.p[j]) for j in GEN_TECHS
    )
    switching = scale * sum(
        instance.switch_cost[j] * float(disc[:T - 1] @ solution.w[j].sum(axis=0))
        for j in GEN_TECHS
    )
    gas = scale * instance.gas_price * float(disc @ solution.q)
    purchased = scale * instance.elec_price * float(disc @ solution.u)
    total = capital + peak + maintenance + switching + gas + purchased
    return {
        "capital": capital,
        "peak": peak,
        "maintenance": maintenance,
        "switching": switching,
        "gas": gas,
        "purchased_power": purchased,
        "total": total,
    }


def to_two_stage(full: CogenFullModel) -> TwoStageMilp:
    """Export to the generic binary two-stage container.

    First-stage integers become sums of unit indicators; unit production
    pairs with its on/off binary through the switched bounds; every other
    continuous variable lands in the non-negative block, with the battery
    input/output split into positive and negative parts.  The paired and
    non-negative blocks are padded to a common width.
    """
    inst = full.instance
    lay = full.layout
    T = lay.T
    n_units_total = sum(lay.n_units[j] for j in GEN_TECHS)

    # first stage: unit indicators per technology
    caps = [inst.unit_caps[j] for j in TECHS]
    m = sum(caps)
    ybase = {}
    off = 0
    for j, c in zip(TECHS, caps):
        ybase[j] = off
        off += c

    nx = n_units_total * T  # real binary/production pairs
    # non-negative block: w, u, b, bio+, bio-, s, sout, q, umax
    nw_parts = []
    woff = {}
    off = 0
    for j in GEN_TECHS:
        woff[j] = off
        off += lay.n_units[j] * (T - 1)
    off_u = off
    off += T
    off_b = off
    off += T
    off_biop = off
    off += T
    off_bion = off
    off += T
    off_s = off
    off += T
    off_sout = off
    off += T
    off_q = off
    off += T
    off_umax = off
    off += lay.n_months
    nw = off
    N = max(nx, nw)

    xbase = {}
    off = 0
    for j in GEN_TECHS:
        xbase[j] = off
        off += lay.n_units[j] * T

    def xcol(j, it):
        return m + xbase[j] + it

    def vcol(j, it):
        return m + N + xbase[j] + it

    def wcol(local):
        return m + 2 * N + local

    stack = RowStack()
    t = np.arange(T)
    td = np.arange(T - 1)

    # power demand (negated to <=)
    r0 = stack.family("pdem", T, -np.inf, -inst.demand_elec)
    for j in GEN_TECHS:
        nj = lay.n_units[j]
        it = np.arange(nj * T)
        stack.put(r0 + it % T, vcol(j, it), -1.0)
    stack.put(r0 + t, wcol(off_u + t), -1.0)
    stack.put(r0 + t, wcol(off_biop + t), 1.0)
    stack.put(r0 + t, wcol(off_bion + t), -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        it = np.arange(nj * T)
        r0 = stack.family(f"onoff[{j}]", T, -np.inf, 0.0)
        stack.put(r0 + it % T, xcol(j, it), 1.0)
        stack.put(r0 + t[:, None], ybase[j] + np.arange(caps[TECHS.index(j)]),
                  -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        if nj < 2:
            continue
        it = np.arange((nj - 1) * T)
        r0 = stack.family(f"symbrk[{j}]", (nj - 1) * T, -np.inf, 0.0)
        stack.put(r0 + it, xcol(j, T + it), 1.0)
        stack.put(r0 + it, xcol(j, it), -1.0)

    for j in GEN_TECHS:
        nj = lay.n_units[j]
        iw = np.arange(nj * (T - 1))
        ix = (iw // (T - 1)) * T + iw % (T - 1)
        r0 = stack.family(f"swup[{j}]", nj * (T - 1), -np.inf, 0.0)
        stack.put(r0 + iw, xcol(j, ix + 1), 1.0)
        stack.put(r0 + iw, xcol(j, ix), -1.0)
        stack.put(r0 + iw, wcol(woff[j] + iw), -1.0)
        r0 = stack.family(f"swdn[{j}]", nj * (T - 1), -np.inf, 0.0)
        stack.put(r0 + iw, xcol(j, ix), 1.0)
        stack.put(r0 + iw, xcol(j, ix + 1), -1.0)
        stack.put(r0 + iw, wcol(woff[j] + iw), -1.0)

    r0 = stack.family("peak", T, -np.inf, 0.0)
    stack.put(r0 + t, wcol(off_u + t), 1.0)
    stack.put(r0 + t, wcol(off_umax + inst.month_of_hour()), -1.0)

    keep_p = 1.0 - inst.loss_p

    def battery_balance(name, rows, t_next, t_now):
        # b(t_next) - keep*b(t_now) - bio(t_now) = 0, as two <= rows
        for sign in (1.0, -1.0):
            r0 = stack.family(name if sign > 0 else name + "_neg",
                              np.size(rows), -np.inf, 0.0)
            stack.put(r0 + rows, wcol(off_b + t_next), sign)
            stack.put(r0 + rows, wcol(off_b + t_now), -keep_p * sign)
            stack.put(r0 + rows, wcol(off_biop + t_now), -sign)
            stack.put(r0 + rows, wcol(off_bion + t_now), sign)

    battery_balance("bdyn", td, td + 1, td)
    battery_balance("bwrap", np.arange(1), np.array([0]), np.array([T - 1]))
    for sign in (1.0, -1.0):
        r0 = stack.family("bcyc" if sign > 0 else "bcyc_neg", 1, -np.inf, 0.0)
        stack.put(r0, wcol(off_b + 0), sign)
        stack.put(r0, wcol(off_b + T - 1), -sign)

    r0 = stack.family("bcap", T, -np.inf, 0.0)
    stack.put(r0 + t, wcol(off_b + t), 1.0)
    stack.put(r0 + t[:, None], ybase["batt"] + np.arange(inst.unit_caps["batt"]),
              -inst.batt_cap)

    r0 = stack.family("hdem", T, -np.inf, -inst.demand_heat)
    stack.put(r0 + t, wcol(off_sout + t), -1.0)
    stack.put(r0 + t, wcol(off_q + t), -1.0)

    keep_q = 1.0 - inst.loss_q
    ratio = inst.chp_heat_ratio
    nchp = lay.n_units["chp"]

    def storage_row(name, rows, t_next, t_now):
        r0 = stack.family(name, np.size(rows), -np.inf, 0.0)
        stack.put(r0 + rows, wcol(off_s + t_next), 1.0)
        stack.put(r0 + rows, wcol(off_s + t_now), -keep_q)
        stack.put(r0 + rows, wcol(off_sout + t_now), 1.0)
        for i in range(nchp):
            stack.put(r0 + rows, vcol("chp", i * T + t_now), -ratio)

    storage_row("sdyn", td, td + 1, td)
    storage_row("swrap", np.arange(1), np.array([0]), np.array([T - 1]))
    for sign in (1.0, -1.0):
        r0 = stack.family("scyc" if sign > 0 else "scyc_neg", 1, -np.inf, 0.0)
        stack.put(r0, wcol(off_s + 0), sign)
        stack.put(r0, wcol(off_s + T - 1), -sign)

    r0 = stack.family("sbnd", T, -np.inf, 0.0)
    stack.put(r0 + t, wcol(off_sout + t), 1.0)
    stack.put(r0 + t, wcol(off_s + t), -1.0)
    r0 = stack.family("scap", T, -np.inf, 0.0)
    stack.put(r0 + t, wcol(off_s + t), 1.0)
    stack.put(r0 + t[:, None], ybase["stor"] + np.arange(inst.unit_caps["stor"]),
              -inst.stor_cap)
    r0 = stack.family("qcap", T, -np.inf, 0.0)
    stack.put(r0 + t, wcol(off_q + t), 1.0)
    stack.put(r0 + t[:, None], ybase["boil"] + np.arange(inst.unit_caps["boil"]),
              -inst.boil_cap)

    M = stack.n_rows
    glob = stack.matrix(m + 3 * N).tocsc()
    A = glob[:, :m]
    B = glob[:, m:m + N]
    C = glob[:, m + N:m + 2 * N]
    D = glob[:, m + 2 * N:]
    f = stack.row_ub()

    scale = inst.cost_scale
    disc = inst.hourly_discounts()
    a = np.concatenate([
        np.full(caps[i], inst.capital[TECHS[i]]) for i in range(len(TECHS))
    ])
    bcost = np.zeros(N)
    ccost = np.zeros(N)
    L = np.zeros(N)
    U = np.zeros(N)
    for j in GEN_TECHS:
        nj = lay.n_units[j]
        sl = slice(xbase[j], xbase[j] + nj * T)
        ccost[sl] = np.tile(scale * inst.maint[j] * disc, nj)
        L[sl] = inst.rmin[j]
        U[sl] = inst.rmax[j]
    dcost = np.zeros(N)
    for j in GEN_TECHS:
        nj = lay.n_units[j]
        dcost[woff[j]:woff[j] + nj * (T - 1)] = np.tile(
            scale * inst.switch_cost[j] * disc[:T - 1], nj
        )
    dcost[off_u:off_u + T] = scale * inst.elec_price * disc
    dcost[off_q:off_q + T] = scale * inst.gas_price * disc
    dcost[off_umax:off_umax + lay.n_months] = scale * (
        inst.discount ** inst.month_last_hour().astype(float)
        * inst.peak_charges
    )
    return TwoStageMilp.build(
        a=a, b=bcost, c=ccost, d=dcost, A=A, B=B, C=C, D=D, f=f, L=L, U=U
    )
