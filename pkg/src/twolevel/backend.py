"""Solver backends behind a small uniform interface.

Everything upstream talks to a backend through two calls, solve_lp and
solve_milp, both taking a MilpModel and SolveSettings and returning a
SolveOutcome.  The shipped backend wraps scipy's HiGHS bindings
(scipy.optimize.linprog / scipy.optimize.milp).  Those bindings expose
neither basis nor incumbent injection, so the capability flags on the
backend tell callers whether warm-start information will be honored;
when a capability is missing the corresponding settings fields are
accepted and ignored rather than rejected.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as scipy_milp

from .errors import BackendUnavailable
from .milp import MilpModel

# canonical outcome statuses
OPTIMAL = "optimal"
FEASIBLE_GAPPED = "feasible_gapped"  # hit a limit but holds an incumbent
TIME_LIMIT = "time_limit"            # hit a limit with no incumbent
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ERROR = "error"


@dataclass
class SolveSettings:
    """Knobs shared by all backends.

    time_limit_s / rel_gap are passed through to the solver.  basis_in
    and incumbent_in are warm-start hints honored only by backends whose
    capability flags say so.
    """

    time_limit_s: float = 300.0
    rel_gap: float = 0.01
    feasibility_tol: float = 1e-6
    presolve: bool = True
    verbose: bool = False
    basis_in: Optional[object] = None
    incumbent_in: Optional[np.ndarray] = None
    threads: Optional[int] = None

    def with_time_limit(self, seconds: float) -> "SolveSettings":
        return replace(self, time_limit_s=float(seconds))


def desk_settings() -> SolveSettings:
    """Defaults for interactive runs on a workstation."""
    return SolveSettings(time_limit_s=300.0, rel_gap=0.01)


def benchmark_settings() -> SolveSettings:
    """Defaults for long benchmark runs."""
    return SolveSettings(time_limit_s=10800.0, rel_gap=0.01)


@dataclass
class SolveOutcome:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    best_bound: Optional[float] = None
    basis_out: Optional[object] = None
    stats: dict = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        """True when a usable primal solution is attached."""
        return self.status in (OPTIMAL, FEASIBLE_GAPPED) and self.x is not None

    @property
    def gap(self) -> Optional[float]:
        if self.objective is None or self.best_bound is None:
            return None
        denom = max(abs(self.objective), 1e-12)
        return abs(self.objective - self.best_bound) / denom


class ScipyBackend:
    """HiGHS via scipy.optimize.  No basis or incumbent injection."""

    name = "scipy"
    supports_basis_io = False
    supports_incumbent_start = False

    # scipy.optimize.linprog status codes
    _LP_STATUS = {0: OPTIMAL, 1: TIME_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED, 4: ERROR}

    def solve_lp(self, model: MilpModel, settings: Optional[SolveSettings] = None) -> SolveOutcome:
        """Solve the continuous relaxation of `model` (integrality ignored)."""
        settings = settings or SolveSettings()
        m = model.num_rows
        a_ub, b_ub, a_eq, b_eq = None, None, None, None
        if m:
            is_eq = model.row_lb == model.row_ub
            has_ub = np.isfinite(model.row_ub) & ~is_eq
            has_lb = np.isfinite(model.row_lb) & ~is_eq
            ub_blocks, ub_rhs = [], []
            if has_ub.any():
                ub_blocks.append(model.A[has_ub])
                ub_rhs.append(model.row_ub[has_ub])
            if has_lb.any():
                ub_blocks.append(-model.A[has_lb])
                ub_rhs.append(-model.row_lb[has_lb])
            if ub_blocks:
                a_ub = sp.vstack(ub_blocks, format="csr")
                b_ub = np.concatenate(ub_rhs)
            if is_eq.any():
                a_eq = model.A[is_eq]
                b_eq = model.row_lb[is_eq]
        options = {
            "time_limit": float(settings.time_limit_s),
            "presolve": settings.presolve,
            "disp": settings.verbose,
            "primal_feasibility_tolerance": settings.feasibility_tol,
            "dual_feasibility_tolerance": settings.feasibility_tol,
        }
        t0 = time.perf_counter()
        res = linprog(
            model.obj, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
            bounds=np.column_stack([model.lb, model.ub]),
            method="highs", options=options,
        )
        wall = time.perf_counter() - t0
        status = self._LP_STATUS.get(res.status, ERROR)
        x = np.asarray(res.x, dtype=float) if res.x is not None else None
        if status == OPTIMAL and x is None:
            status = ERROR
        objective = model.objective_value(x) if x is not None else None
        return SolveOutcome(
            status=status,
            x=x,
            objective=objective,
            best_bound=objective if status == OPTIMAL else None,
            stats={
                "wall_time_s": wall,
                "simplex_iterations": int(getattr(res, "nit", 0) or 0),
            },
            message=str(getattr(res, "message", "")),
        )

    def solve_milp(self, model: MilpModel, settings: Optional[SolveSettings] = None) -> SolveOutcome:
        settings = settings or SolveSettings()
        constraints = None
        if model.num_rows:
            constraints = LinearConstraint(model.A, model.row_lb, model.row_ub)
        options = {
            "time_limit": float(settings.time_limit_s),
            "mip_rel_gap": float(settings.rel_gap),
            "presolve": settings.presolve,
            "disp": settings.verbose,
        }
        t0 = time.perf_counter()
        res = scipy_milp(
            model.obj,
            constraints=constraints,
            integrality=model.integrality,
            bounds=Bounds(model.lb, model.ub),
            options=options,
        )
        wall = time.perf_counter() - t0
        x = np.asarray(res.x, dtype=float) if res.x is not None else None
        if res.status == 0:
            status = OPTIMAL if x is not None else ERROR
        elif res.status == 1:
            status = FEASIBLE_GAPPED if x is not None else TIME_LIMIT
        elif res.status == 2:
            status = INFEASIBLE
        elif res.status == 3:
            status = UNBOUNDED
        else:
            status = ERROR
        objective = model.objective_value(x) if x is not None else None
        bound = getattr(res, "mip_dual_bound", None)
        if bound is not None and np.isfinite(bound):
            bound = float(bound) + model.obj_const
        elif status == OPTIMAL:
            bound = objective
        else:
            bound = None
        nodes = getattr(res, "mip_node_count", None)
        return SolveOutcome(
            status=status,
            x=x,
            objective=objective,
            best_bound=bound,
            stats={
                "wall_time_s": wall,
                "nodes": int(nodes) if nodes is not None else 0,
            },
            message=str(getattr(res, "message", "")),
        )


_BACKENDS = {"scipy": ScipyBackend}


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def get_backend(name: Optional[str] = None):
    """Resolve a backend by name, the TWOLEVEL_BACKEND env var, or default."""
    name = name or os.environ.get("TWOLEVEL_BACKEND", "scipy")
    try:
        cls = _BACKENDS[name]
    except KeyError:
        raise BackendUnavailable(
            f"unknown backend {name!r}; available: {', '.join(available_backends())}"
        ) from None
    return cls()


def solve_lp(model: MilpModel, settings: Optional[SolveSettings] = None,
             backend=None) -> SolveOutcome:
    backend = backend or get_backend()
    return backend.solve_lp(model, settings)


def solve_milp(model: MilpModel, settings: Optional[SolveSettings] = None,
               backend=None) -> SolveOutcome:
    backend = backend or get_backend()
    return backend.solve_milp(model, settings)
