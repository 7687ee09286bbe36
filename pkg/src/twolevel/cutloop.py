"""Cut loop between the coarse and semi-coarse models.

Phase one (optional) iterates LP relaxations of the coarse model,
adding fine coupling rows violated by the LP iterate until the iterate
is feasible for the LP relaxation of the semi-coarse model.  Phase two
repeats the same loop with MILPs; when the MILP iterate violates no
fine row it is optimal for the semi-coarse model (up to the backend
gap), because the coarse model relaxes the semi-coarse one.  The final
point is lifted back to the fine scale, where it is feasible by
construction of the profile substitution.

Termination is finite: every non-terminal round strictly grows the
extension set, which is bounded by the fine row count.  A round that
finds violated rows but cannot add a new one (all already present,
i.e. the backend returned a point violating rows beyond its own
tolerance) stops the loop with termination_reason "stalled" instead of
cycling.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import backend as bk
from .coarsen import (
    CoarseModel,
    CoarsePoint,
    ProfileLibrary,
    SemiCoarseModel,
    build_coarse,
    build_semi_coarse,
)
from .errors import (
    BackendFailure,
    DimensionMismatch,
    Infeasible,
    TimeLimitWithGap,
    Unbounded,
)
from .twostage import (
    FinePoint,
    TwoStageMilp,
    VariablePartition,
    check_feasible,
    lift_solution,
)


@dataclass
class CutLoopConfig:
    """Loop tolerances and limits.

    max_rows_per_round of None means "add every violated row"; a count
    caps each round to the most violated rows.  milp_time_limit bounds
    each individual backend solve (LP and MILP alike).
    """

    row_violation_tol: float = 1e-6
    max_rows_per_round: Optional[int] = None
    milp_time_limit: float = 300.0
    milp_rel_gap: float = 0.01
    use_lp_warm_start: bool = True
    basis_reuse: bool = True
    milp_incumbent_start: bool = False

    def __post_init__(self):
        if self.row_violation_tol <= 0:
            raise ValueError("row_violation_tol must be positive")
        if not 0 <= self.milp_rel_gap < 1:
            raise ValueError("milp_rel_gap must lie in [0, 1)")
        if self.max_rows_per_round is not None and self.max_rows_per_round < 1:
            raise ValueError("max_rows_per_round must be >= 1 or None")

    def solver_settings(self) -> bk.SolveSettings:
        return bk.SolveSettings(
            time_limit_s=self.milp_time_limit, rel_gap=self.milp_rel_gap
        )


@dataclass
class IterateRecord:
    phase: str          # "LP" or "MILP"
    iteration: int
    rows_added: int     # rows this iterate caused to be added
    constraints: int    # row count of the model solved at this iterate
    objective: float
    time_s: float
    simplex_iters: int = 0
    nodes: int = 0


@dataclass
class SolveReport:
    objective: Optional[float]
    termination_reason: str  # "optimal" | "time_limit_with_gap" | "stalled"
    iterates: List[IterateRecord] = field(default_factory=list)
    total_rows_added: int = 0
    coarse_point: Optional[CoarsePoint] = None
    lifted_point: Optional[FinePoint] = None
    mu: Optional[float] = None
    lifted_max_violation: Optional[float] = None
    final_coarse: Optional[CoarseModel] = None

    @property
    def first_milp_objective(self) -> Optional[float]:
        for rec in self.iterates:
            if rec.phase == "MILP":
                return rec.objective
        return None

    @property
    def milp_rounds(self) -> int:
        return sum(1 for rec in self.iterates if rec.phase == "MILP")

    @property
    def lp_rounds(self) -> int:
        return sum(1 for rec in self.iterates if rec.phase == "LP")

    def compute_mu(self) -> Optional[float]:
        """Relative gap between the first MILP iterate and the final value."""
        first = self.first_milp_objective
        if first is None or self.objective in (None, 0.0):
            return None
        return (self.objective - first) / self.objective

    def to_json_dict(self, include_points: bool = True) -> dict:
        doc = {
            "format": "twolevel-report",
            "version": 1,
            "objective": self.objective,
            "termination_reason": self.termination_reason,
            "total_rows_added": self.total_rows_added,
            "mu": self.mu,
            "lifted_max_violation": self.lifted_max_violation,
            "first_milp_objective": self.first_milp_objective,
            "lp_rounds": self.lp_rounds,
            "milp_rounds": self.milp_rounds,
            "iterates": [asdict(rec) for rec in self.iterates],
        }
        if include_points and self.coarse_point is not None:
            doc["coarse_point"] = {
                "y": self.coarse_point.y.tolist(),
                "xbar": self.coarse_point.xbar.tolist(),
                "vbar": self.coarse_point.vbar.tolist(),
                "wbar": self.coarse_point.wbar.tolist(),
            }
        if include_points and self.lifted_point is not None:
            doc["lifted_point"] = {
                "y": self.lifted_point.y.tolist(),
                "x": self.lifted_point.x.tolist(),
                "v": self.lifted_point.v.tolist(),
                "w": self.lifted_point.w.tolist(),
            }
        return doc

    def save_json(self, path, include_points: bool = True) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(include_points=include_points), fh)

    def save_iterates_csv(self, path) -> None:
        cols = [
            "phase", "iter", "rows_added", "constraints",
            "objective", "time_s", "simplex_iters", "nodes",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for rec in self.iterates:
                writer.writerow([
                    rec.phase, rec.iteration, rec.rows_added, rec.constraints,
                    rec.objective, rec.time_s, rec.simplex_iters, rec.nodes,
                ])


def find_violated(semi: SemiCoarseModel, point, tol: float = 1e-6) -> List[int]:
    """Fine coupling rows violated at a reduced point.

    Sorted by descending violation, ties broken by ascending index;
    empty means the point satisfies every fine coupling row to tol.
    """
    z = point.as_vector() if isinstance(point, CoarsePoint) else np.asarray(point)
    resid = semi.coupling_residuals(z)
    idx = np.nonzero(resid > tol)[0]
    if idx.size == 0:
        return []
    order = np.lexsort((idx, -resid[idx]))
    return [int(i) for i in idx[order]]


def _select_rows(violated: Sequence[int], config: CutLoopConfig) -> List[int]:
    if config.max_rows_per_round is None:
        return list(violated)
    return list(violated[: config.max_rows_per_round])


def _record(phase, iteration, rows_added, constraints, out) -> IterateRecord:
    return IterateRecord(
        phase=phase,
        iteration=iteration,
        rows_added=rows_added,
        constraints=constraints,
        objective=float(out.objective),
        time_s=float(out.stats.get("wall_time_s", 0.0)),
        simplex_iters=int(out.stats.get("simplex_iterations", 0)),
        nodes=int(out.stats.get("nodes", 0)),
    )


def lp_warm_start_phase(semi: SemiCoarseModel, coarse: CoarseModel,
                        backend=None, config: Optional[CutLoopConfig] = None
                        ) -> Tuple[np.ndarray, CoarseModel, List[IterateRecord]]:
    """Iterate coarse LP relaxations until LP-feasible for the semi model.

    Returns the last LP iterate (raw vector), the coarse model enriched
    with every row added, and the iterate records.
    """
    backend = backend or bk.get_backend()
    config = config or CutLoopConfig()
    records: List[IterateRecord] = []
    basis = None
    iteration = 0
    x = None
    while True:
        flat = coarse.to_milp().relax()
        settings = config.solver_settings()
        if config.basis_reuse and getattr(backend, "supports_basis_io", False):
            settings.basis_in = basis
        out = backend.solve_lp(flat, settings)
        if out.status == bk.INFEASIBLE:
            raise Infeasible(
                "coarse LP relaxation infeasible (so the semi-coarse model is too)",
                outcome=out, phase="LP", iteration=iteration,
            )
        if out.status == bk.UNBOUNDED:
            raise Unbounded(
                "coarse LP relaxation unbounded", outcome=out,
                phase="LP", iteration=iteration,
            )
        if not out.ok:
            raise BackendFailure(
                f"LP solve failed with status {out.status}: {out.message}",
                outcome=out, phase="LP", iteration=iteration,
            )
        basis = out.basis_out
        x = out.x
        violated = find_violated(semi, x, config.row_violation_tol)
        new_rows = [
            r for r in _select_rows(violated, config)
            if r not in coarse.extension
        ] if violated else []
        records.append(
            _record("LP", iteration, len(new_rows), flat.num_rows, out)
        )
        if not violated or not new_rows:
            return x, coarse, records
        coarse = coarse.with_fine_rows(new_rows)
        iteration += 1


def milp_phase(semi: SemiCoarseModel, coarse: CoarseModel, backend=None,
               config: Optional[CutLoopConfig] = None,
               prior_records: Optional[List[IterateRecord]] = None) -> SolveReport:
    """Iterate coarse MILPs until the iterate is semi-coarse feasible."""
    backend = backend or bk.get_backend()
    config = config or CutLoopConfig()
    records: List[IterateRecord] = list(prior_records or [])
    incumbent = None
    iteration = 0
    while True:
        flat = coarse.to_milp()
        settings = config.solver_settings()
        if config.milp_incumbent_start and getattr(
            backend, "supports_incumbent_start", False
        ):
            settings.incumbent_in = incumbent
        out = backend.solve_milp(flat, settings)
        if out.status == bk.INFEASIBLE:
            raise Infeasible(
                "coarse MILP infeasible (so the semi-coarse model is too)",
                outcome=out, phase="MILP", iteration=iteration,
            )
        if out.status == bk.UNBOUNDED:
            raise Unbounded(
                "coarse MILP unbounded", outcome=out,
                phase="MILP", iteration=iteration,
            )
        if out.status == bk.TIME_LIMIT or (not out.ok and out.x is None):
            partial = SolveReport(
                objective=None,
                termination_reason="time_limit_with_gap",
                iterates=records,
                total_rows_added=sum(rec.rows_added for rec in records),
                final_coarse=coarse,
            )
            raise TimeLimitWithGap(
                "time limit hit with no incumbent available", report=partial
            )
        incumbent = out.x
        violated = find_violated(semi, out.x, config.row_violation_tol)
        new_rows = [
            r for r in _select_rows(violated, config)
            if r not in coarse.extension
        ] if violated else []
        records.append(
            _record("MILP", iteration, len(new_rows), flat.num_rows, out)
        )
        if out.status == bk.FEASIBLE_GAPPED:
            # best incumbent under a hit time limit: stop, flagged
            reason = "time_limit_with_gap"
        elif not violated:
            reason = "optimal"
        elif not new_rows:
            reason = "stalled"
        else:
            coarse = coarse.with_fine_rows(new_rows)
            iteration += 1
            continue
        point = semi.point_from_vector(out.x)
        report = SolveReport(
            objective=float(out.objective),
            termination_reason=reason,
            iterates=records,
            total_rows_added=sum(rec.rows_added for rec in records),
            coarse_point=point,
            final_coarse=coarse,
        )
        report.mu = report.compute_mu()
        return report


def solve_two_level(model: TwoStageMilp, part: VariablePartition,
                    profiles: ProfileLibrary, backend=None,
                    config: Optional[CutLoopConfig] = None,
                    delta_r: Optional[int] = None,
                    pre_added_rows: Sequence[int] = ()) -> SolveReport:
    """Coarsen, cut-loop, and lift back to a feasible fine-scale point."""
    backend = backend or bk.get_backend()
    config = config or CutLoopConfig()
    semi = build_semi_coarse(model, part, profiles)
    coarse = build_coarse(semi, delta_r)
    if len(pre_added_rows):
        coarse = coarse.with_fine_rows(pre_added_rows)
    records: List[IterateRecord] = []
    if config.use_lp_warm_start:
        _, coarse, records = lp_warm_start_phase(semi, coarse, backend, config)
    report = milp_phase(semi, coarse, backend, config, prior_records=records)
    if report.coarse_point is not None:
        lifted = lift_solution(part, semi.profiles, report.coarse_point)
        verdict = check_feasible(model, lifted)
        report.lifted_point = lifted
        report.lifted_max_violation = verdict.max_violation
    return report
