"""Cut-loop phases: violation detection, termination, report contents."""

import numpy as np
import pytest

from twolevel import backend as bk
from twolevel.coarsen import (
    ProfileLibrary,
    add_fine_rows,
    build_coarse,
    build_semi_coarse,
)
from twolevel.cutloop import (
    CutLoopConfig,
    IterateRecord,
    SolveReport,
    find_violated,
    lp_warm_start_phase,
    milp_phase,
    solve_two_level,
)
from twolevel.errors import Infeasible, TimeLimitWithGap
from twolevel.twostage import TwoStageMilp, check_feasible, partition, to_milp

from _instances import enumerate_fine_optimum, rand_library, rand_twostage


def strict_config(**kw):
    base = dict(milp_time_limit=60.0, milp_rel_gap=0.0)
    base.update(kw)
    return CutLoopConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            CutLoopConfig(row_violation_tol=0.0)
        with pytest.raises(ValueError):
            CutLoopConfig(milp_rel_gap=1.0)
        with pytest.raises(ValueError):
            CutLoopConfig(max_rows_per_round=0)
        assert CutLoopConfig(max_rows_per_round=None).max_rows_per_round is None


class TestFindViolated:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.model, self.part = rand_twostage(rng, m=2, n=2, delta=3)
        lib = rand_library(rng, self.model, self.part, K=2, I=1, J=1)
        self.semi = build_semi_coarse(self.model, self.part, lib)
        self.rng = rng

    def test_feasible_point_gives_empty(self):
        z = np.zeros(self.semi.num_vars)  # zero point: rows 0 <= f > 0
        assert find_violated(self.semi, z) == []

    def test_threshold(self):
        # scale a direction until exactly its worst row passes 2*tol
        z = self.rng.uniform(0.0, 1.0, self.semi.num_vars)
        resid = self.semi.coupling_residuals(z)
        assert resid.max() > 0
        tol = resid.max() / 2.0
        worst = int(np.argmax(resid))
        got = find_violated(self.semi, z, tol=tol)
        assert worst in got
        assert got[0] == worst

    def test_matches_dense_scan_and_ordering(self):
        for _ in range(10):
            z = self.rng.uniform(-0.5, 1.0, self.semi.num_vars)
            tol = 1e-6
            got = find_violated(self.semi, z, tol=tol)
            dense = (
                np.hstack([
                    self.model.A.toarray(),
                    self.semi.Bbar.toarray(),
                    self.semi.Cbar.toarray(),
                    self.semi.Dbar.toarray(),
                ]) @ z - self.model.f
            )
            expect = [int(i) for i in np.nonzero(dense > tol)[0]]
            assert sorted(got) == expect
            resid = np.maximum(dense, 0.0)
            for earlier, later in zip(got, got[1:]):
                assert (resid[earlier], -earlier) >= (resid[later], -later)


def one_group_w_instance():
    """One group, rows only on w: the aggregated row hides a lower bound.

    row 0:  w_1 <= 1,  row 1:  -w_1 <= -0.5 (w_1 >= 0.5).
    Aggregated (delta_r=2): 0 <= 0.5, vacuous.  Minimizing w_1 makes the
    plain coarse LP choose w_1 = 0, violating only fine row 1.
    """
    model = TwoStageMilp.build(
        a=[0.0], b=[0.0, 0.0], c=[0.0, 0.0], d=[1.0, 0.0],
        A=np.zeros((2, 1)), B=np.zeros((2, 2)), C=np.zeros((2, 2)),
        D=[[1.0, 0.0], [-1.0, 0.0]],
        f=[1.0, -0.5], L=[0.0, 0.0], U=[1.0, 1.0],
    )
    part = partition(model, 2)
    lib = ProfileLibrary.build(
        2,
        np.zeros((2, 1)),
        [[np.zeros(2)]],
        [np.array([1.0, 0.0])],
    )
    return model, part, lib


class TestLpWarmStart:
    def test_zero_rounds_when_already_feasible(self):
        rng = np.random.default_rng(7)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, model, part, K=1, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        # saturate: every fine row present, nothing can be violated
        coarse = add_fine_rows(build_coarse(semi), range(model.M))
        x, out_coarse, recs = lp_warm_start_phase(semi, coarse, config=strict_config())
        assert len(recs) == 1
        assert recs[0].rows_added == 0
        assert out_coarse.extension == coarse.extension

    def test_hidden_row_found_in_one_round(self):
        model, part, lib = one_group_w_instance()
        semi = build_semi_coarse(model, part, lib)
        coarse = build_coarse(semi, 2)

        # direct-solve oracle: plain coarse LP picks wbar = 0
        first = bk.solve_lp(coarse.to_milp().relax())
        assert first.status == bk.OPTIMAL
        z0 = first.x
        assert find_violated(semi, z0) == [1]

        x, enriched, recs = lp_warm_start_phase(semi, coarse, config=strict_config())
        assert [rec.rows_added for rec in recs] == [1, 0]
        assert enriched.extension == (1,)
        assert find_violated(semi, x) == []
        # direct-solve oracle: enriched LP must now pay w_1 = 0.5
        again = bk.solve_lp(enriched.to_milp().relax())
        assert again.objective == pytest.approx(0.5, abs=1e-8)

    def test_infeasible_propagates_with_context(self):
        # two copies of "y_1 <= -1": their sum is still impossible
        model = TwoStageMilp.build(
            a=[1.0], b=[0.0], c=[0.0], d=[0.0],
            A=[[1.0], [1.0]], B=np.zeros((2, 1)), C=np.zeros((2, 1)),
            D=np.zeros((2, 1)), f=[-1.0, -1.0], L=[0.0], U=[1.0],
        )
        part = partition(model, 1)
        lib = ProfileLibrary.build(1, np.array([[1.0]]), [[np.array([0.5])]])
        semi = build_semi_coarse(model, part, lib)
        coarse = build_coarse(semi, 2)
        with pytest.raises(Infeasible) as err:
            lp_warm_start_phase(semi, coarse, config=strict_config())
        assert err.value.phase == "LP"
        assert err.value.iteration == 0


class TestMilpPhase:
    def test_saturated_model_single_solve(self):
        rng = np.random.default_rng(3)
        model, part = rand_twostage(rng, m=2, n=2, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        coarse = add_fine_rows(build_coarse(semi), range(model.M))
        report = milp_phase(semi, coarse, config=strict_config())
        assert report.termination_reason == "optimal"
        assert report.milp_rounds == 1
        assert report.total_rows_added == 0
        direct = bk.solve_milp(semi.to_milp(), bk.SolveSettings(time_limit_s=60, rel_gap=0.0))
        assert report.objective == pytest.approx(direct.objective, rel=1e-7, abs=1e-7)

    def test_final_objective_matches_direct_semi_solve(self):
        rng = np.random.default_rng(21)
        for trial in range(6):
            model, part = rand_twostage(rng, m=2, n=3, delta=3)
            lib = rand_library(rng, model, part, K=2, I=2, J=2)
            semi = build_semi_coarse(model, part, lib)
            report = milp_phase(semi, build_coarse(semi), config=strict_config())
            assert report.termination_reason == "optimal"
            direct = bk.solve_milp(
                semi.to_milp(), bk.SolveSettings(time_limit_s=60, rel_gap=0.0)
            )
            assert direct.status == bk.OPTIMAL
            assert report.objective == pytest.approx(
                direct.objective, rel=1e-7, abs=1e-7
            )
            # feasibility on exit and monotone objective across rounds
            assert find_violated(semi, report.coarse_point) == []
            milp_objs = [r.objective for r in report.iterates if r.phase == "MILP"]
            assert all(
                b >= a - 1e-7 for a, b in zip(milp_objs, milp_objs[1:])
            )
            assert report.milp_rounds <= model.M + 1

    def test_constraint_counts_nondecreasing(self):
        rng = np.random.default_rng(33)
        model, part = rand_twostage(rng, m=2, n=3, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        report = milp_phase(semi, build_coarse(semi), config=strict_config())
        counts = [r.constraints for r in report.iterates]
        assert counts == sorted(counts)

    def test_max_rows_per_round_cap(self):
        rng = np.random.default_rng(14)
        model, part = rand_twostage(rng, m=2, n=3, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        capped = milp_phase(
            semi, build_coarse(semi), config=strict_config(max_rows_per_round=1)
        )
        assert capped.termination_reason == "optimal"
        assert all(
            r.rows_added <= 1 for r in capped.iterates if r.phase == "MILP"
        )
        uncapped = milp_phase(semi, build_coarse(semi), config=strict_config())
        assert capped.objective == pytest.approx(
            uncapped.objective, rel=1e-7, abs=1e-7
        )


class ScriptedBackend:
    """Backend stub replaying canned outcomes, for control-flow tests."""

    name = "scripted"
    supports_basis_io = False
    supports_incumbent_start = False

    def __init__(self, milp_outcomes=(), lp_outcomes=()):
        self.milp_outcomes = list(milp_outcomes)
        self.lp_outcomes = list(lp_outcomes)

    def solve_lp(self, model, settings=None):
        return self.lp_outcomes.pop(0)

    def solve_milp(self, model, settings=None):
        return self.milp_outcomes.pop(0)


class TestScriptedPaths:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.model, self.part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, self.model, self.part, K=1, I=1, J=1)
        self.semi = build_semi_coarse(self.model, self.part, lib)
        self.coarse = build_coarse(self.semi)

    def violating_vector(self):
        """A vector whose only violations are fine coupling rows."""
        z = np.zeros(self.semi.num_vars)
        resid = None
        mat = self.semi.coupling_matrix()
        col = np.asarray(np.argmax(mat.max(axis=0).toarray()))
        j = int(col)
        z[j] = 1000.0
        resid = self.semi.coupling_residuals(z)
        assert resid.max() > 0
        return z

    def test_time_limit_without_incumbent_raises(self):
        scripted = ScriptedBackend(
            milp_outcomes=[bk.SolveOutcome(status=bk.TIME_LIMIT, x=None)]
        )
        with pytest.raises(TimeLimitWithGap) as err:
            milp_phase(self.semi, self.coarse, backend=scripted)
        assert err.value.report is not None
        assert err.value.report.termination_reason == "time_limit_with_gap"

    def test_gapped_incumbent_returned_flagged(self):
        z = np.zeros(self.semi.num_vars)
        scripted = ScriptedBackend(
            milp_outcomes=[
                bk.SolveOutcome(
                    status=bk.FEASIBLE_GAPPED, x=z, objective=0.0,
                    stats={"wall_time_s": 0.1},
                )
            ]
        )
        report = milp_phase(self.semi, self.coarse, backend=scripted)
        assert report.termination_reason == "time_limit_with_gap"
        assert report.coarse_point is not None

    def test_stall_guard(self):
        z = self.violating_vector()
        rows = find_violated(self.semi, z)
        saturated = add_fine_rows(self.coarse, rows)
        out = bk.SolveOutcome(
            status=bk.OPTIMAL, x=z, objective=1.0, stats={"wall_time_s": 0.1}
        )
        scripted = ScriptedBackend(milp_outcomes=[out, out])
        report = milp_phase(self.semi, saturated, backend=scripted)
        assert report.termination_reason == "stalled"
        assert report.milp_rounds == 1


class TestSolveTwoLevel:
    def test_identity_coarsening_reproduces_fine_optimum(self):
        # delta=1, on/off profiles {0,1}, level profiles {L,U}, every row
        # pre-added: the reduced model is the original in disguise
        rng = np.random.default_rng(17)
        model, part = rand_twostage(rng, m=2, n=4, delta=1, M=4)
        # strip the w block so the fine optimum needs no w
        model = TwoStageMilp.build(
            a=model.a, b=model.b, c=model.c, d=np.zeros(model.N),
            A=model.A, B=model.B, C=model.C,
            D=np.zeros((model.M, model.N)), f=model.f, L=model.L, U=model.U,
        )
        Lv, Uv = model.L[0], model.U[0]
        lib = ProfileLibrary.build(
            1,
            np.array([[0.0, 1.0]]),
            [[np.array([0.0])], [np.array([Lv]), np.array([Uv])]],
        )
        report = solve_two_level(
            model, part, lib, config=strict_config(),
            pre_added_rows=range(model.M),
        )
        best, _ = enumerate_fine_optimum(model)
        assert report.objective == pytest.approx(best, rel=1e-7, abs=1e-7)
        assert report.termination_reason == "optimal"
        assert check_feasible(model, report.lifted_point).feasible

    def test_lifted_feasible_and_bounded_below_by_fine(self):
        rng = np.random.default_rng(23)
        for trial in range(5):
            model, part = rand_twostage(rng, m=2, n=2, delta=3, M=6)
            lib = rand_library(rng, model, part, K=2, I=2, J=2)
            report = solve_two_level(model, part, lib, config=strict_config())
            assert report.termination_reason == "optimal"
            assert check_feasible(model, report.lifted_point).feasible
            assert report.lifted_max_violation <= 1e-6
            # reduced optimum can never undercut the fine optimum
            out = bk.solve_milp(
                to_milp(model), bk.SolveSettings(time_limit_s=60, rel_gap=0.0)
            )
            assert report.objective >= out.objective - 1e-7
            assert model.objective(report.lifted_point) == pytest.approx(
                report.objective, rel=1e-9, abs=1e-9
            )

    def test_warm_start_neutrality(self):
        rng = np.random.default_rng(29)
        model, part = rand_twostage(rng, m=2, n=3, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        with_ws = solve_two_level(
            model, part, lib, config=strict_config(use_lp_warm_start=True)
        )
        without = solve_two_level(
            model, part, lib, config=strict_config(use_lp_warm_start=False)
        )
        assert with_ws.objective == pytest.approx(
            without.objective, rel=1e-7, abs=1e-7
        )
        assert with_ws.lp_rounds >= 1
        assert without.lp_rounds == 0

    def test_mu_definition(self):
        rng = np.random.default_rng(31)
        model, part = rand_twostage(rng, m=2, n=3, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        report = solve_two_level(model, part, lib, config=strict_config())
        first = report.first_milp_objective
        if report.objective:
            assert report.mu == pytest.approx(
                (report.objective - first) / report.objective
            )


class TestReportSerialization:
    def make_report(self):
        rng = np.random.default_rng(41)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, model, part, K=1, I=1, J=1)
        return solve_two_level(model, part, lib, config=strict_config())

    def test_json_round_trip_fields(self, tmp_path):
        import json

        report = self.make_report()
        p = tmp_path / "report.json"
        report.save_json(p)
        doc = json.loads(p.read_text())
        assert doc["format"] == "twolevel-report"
        assert doc["objective"] == pytest.approx(report.objective)
        assert doc["termination_reason"] == "optimal"
        assert len(doc["iterates"]) == len(report.iterates)
        assert "lifted_point" in doc
        slim = report.to_json_dict(include_points=False)
        assert "lifted_point" not in slim

    def test_csv_columns_and_rows(self, tmp_path):
        import csv as csvmod

        report = self.make_report()
        p = tmp_path / "iterates.csv"
        report.save_iterates_csv(p)
        with open(p) as fh:
            rows = list(csvmod.reader(fh))
        assert rows[0] == [
            "phase", "iter", "rows_added", "constraints",
            "objective", "time_s", "simplex_iters", "nodes",
        ]
        assert len(rows) == 1 + len(report.iterates)
        assert rows[1][0] in ("LP", "MILP")
