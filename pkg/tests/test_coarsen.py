"""Aggregation identities, tightening/relaxation ordering, provenance."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolevel import backend as bk
from twolevel.coarsen import (
    CoarsePoint,
    ProfileLibrary,
    add_fine_rows,
    aggregate_columns,
    build_coarse,
    build_semi_coarse,
    provenance_sidecar,
)
from twolevel.errors import (
    BadRowIndex,
    DeltaMismatch,
    DimensionMismatch,
    IndivisibleRows,
    InvalidProfile,
)
from twolevel.twostage import TwoStageMilp, check_feasible, lift_solution, partition

from _instances import (
    enumerate_fine_optimum,
    extract_library_from_point,
    rand_library,
    rand_selection_point,
    rand_twostage,
)


# ------------------------------------------------------------------ library

class TestProfileLibrary:
    def test_binary_enforced(self):
        with pytest.raises(InvalidProfile):
            ProfileLibrary.build(2, np.array([[0.5], [1.0]]), [[]])

    def test_two_valued_but_not_01_rejected(self):
        with pytest.raises(InvalidProfile):
            ProfileLibrary.build(2, np.array([[2.0], [0.0]]), [[]])

    def test_negative_w_rejected(self):
        with pytest.raises(InvalidProfile):
            ProfileLibrary.build(
                1, np.array([[1.0]]), [[]], [np.array([-0.5])]
            )

    def test_switched_bound_validity(self):
        L = np.array([0.2, 0.2])
        U = np.array([1.0, 1.0])
        good = ProfileLibrary.build(
            2, np.array([[1.0], [0.0]]), [[np.array([0.5, 0.0])]],
            Lref=L, Uref=U,
        )
        assert good.total_I == 1
        with pytest.raises(InvalidProfile):
            ProfileLibrary.build(
                2, np.array([[1.0], [0.0]]), [[np.array([0.1, 0.0])]],
                Lref=L, Uref=U,  # 0.1 < L*1
            )
        with pytest.raises(InvalidProfile):
            ProfileLibrary.build(
                2, np.array([[1.0], [0.0]]), [[np.array([0.5, 0.3])]],
                Lref=L, Uref=U,  # 0.3 > U*0
            )

    def test_v_parent_mapping(self):
        lib = ProfileLibrary.build(
            1, np.array([[1.0, 0.0, 1.0]]),
            [[np.array([0.3])], [np.array([0.0]), np.array([0.0])], []],
        )
        assert lib.i_counts == (1, 2, 0)
        assert lib.v_parent(0) == (0, 0)
        assert lib.v_parent(1) == (1, 0)
        assert lib.v_parent(2) == (1, 1)
        assert lib.v_slice(2) == slice(3, 3)

    def test_dedupe_merges_and_warns(self):
        lib = ProfileLibrary.build(
            2,
            np.array([[1.0, 1.0], [0.0, 0.0]]),  # duplicate on/off columns
            [[np.array([0.4, 0.0])], [np.array([0.4, 0.0]), np.array([0.2, 0.0])]],
            [np.array([1.0, 1.0]), np.array([1.0, 1.0])],
        )
        with pytest.warns(UserWarning, match="duplicate"):
            out = lib.dedupe()
        assert out.K == 1
        assert out.i_counts == (2,)  # 0.4 kept once, 0.2 kept
        assert out.J == 1

    def test_dedupe_clean_library_is_identity(self):
        lib = ProfileLibrary.build(
            2, np.array([[1.0, 0.0], [0.0, 1.0]]),
            [[np.array([0.4, 0.0])], [np.array([0.0, 0.2])]],
            [np.array([1.0, 0.0])],
        )
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert lib.dedupe() is lib

    def test_json_round_trip(self):
        rng = np.random.default_rng(0)
        model, part = rand_twostage(rng, m=1, n=2, delta=3)
        lib = rand_library(rng, model, part, K=2, I=2, J=1)
        back = ProfileLibrary.from_json_dict(lib.to_json_dict())
        np.testing.assert_array_equal(lib.Xbar, back.Xbar)
        np.testing.assert_array_equal(lib.Vbar, back.Vbar)
        np.testing.assert_array_equal(lib.Wbar, back.Wbar)
        assert lib.i_counts == back.i_counts
        np.testing.assert_array_equal(lib.Lref, back.Lref)


# ------------------------------------------------------------------ columns

class TestAggregateColumns:
    def test_single_group_direct_product(self):
        # B = (3, 5), profiles (1,0) and (1,1) -> Bbar = (3, 8)
        model = TwoStageMilp.build(
            a=[], b=[0.0, 0.0], c=[0.0, 0.0], d=[0.0, 0.0],
            A=np.zeros((1, 0)), B=[[3.0, 5.0]],
            C=np.zeros((1, 2)), D=np.zeros((1, 2)),
            f=[1.0], L=[0.0, 0.0], U=[1.0, 1.0],
        )
        part = partition(model, 2)
        lib = ProfileLibrary.build(
            2, np.array([[1.0, 1.0], [0.0, 1.0]]),
            [[], []],
        )
        _, _, _, Bbar, _, _ = aggregate_columns(model, part, lib)
        np.testing.assert_allclose(Bbar.toarray(), [[3.0, 8.0]])

    def test_cost_column_sum(self):
        # b = (1, 1), Xbar_1 = (1, 1) -> bbar_1 = 2
        model = TwoStageMilp.build(
            a=[], b=[1.0, 1.0], c=[0.0, 0.0], d=[0.0, 0.0],
            A=np.zeros((1, 0)), B=np.zeros((1, 2)),
            C=np.zeros((1, 2)), D=np.zeros((1, 2)),
            f=[1.0], L=[0.0, 0.0], U=[1.0, 1.0],
        )
        part = partition(model, 2)
        lib = ProfileLibrary.build(2, np.array([[1.0], [1.0]]), [[]])
        bbar, *_ = aggregate_columns(model, part, lib)
        np.testing.assert_allclose(bbar, [2.0])

    def test_delta_mismatch(self):
        rng = np.random.default_rng(0)
        model, part = rand_twostage(rng, m=1, n=2, delta=4)
        lib = ProfileLibrary.build(2, np.array([[1.0], [0.0]]), [[]])
        with pytest.raises(DeltaMismatch):
            aggregate_columns(model, part, lib)


def dense_expander(n, prof):
    """Naive oracle: I_n (x) prof as a dense matrix."""
    return np.kron(np.eye(n), prof)


def dense_row_aggregator(groups, delta_r):
    """Naive oracle: I_groups (x) ones(1, delta_r)."""
    return np.kron(np.eye(groups), np.ones((1, delta_r)))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_kronecker_identities_property(seed):
    """Per-group products equal the dense Kronecker expansions to 1e-12."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    delta = int(rng.integers(1, 5))
    model, part = rand_twostage(rng, m=2, n=n, delta=delta)
    lib = rand_library(rng, model, part, K=2, I=2, J=2)
    bbar, cbar, dbar, Bbar, Cbar, Dbar = aggregate_columns(model, part, lib)
    for got, mat, prof in (
        (Bbar, model.B, lib.Xbar), (Cbar, model.C, lib.Vbar), (Dbar, model.D, lib.Wbar)
    ):
        expander = dense_expander(n, prof)
        np.testing.assert_allclose(
            got.toarray(), mat.toarray() @ expander, atol=1e-12, rtol=0
        )
    for gotc, vec, prof in (
        (bbar, model.b, lib.Xbar), (cbar, model.c, lib.Vbar), (dbar, model.d, lib.Wbar)
    ):
        np.testing.assert_allclose(
            gotc, vec @ dense_expander(n, prof), atol=1e-12, rtol=0
        )


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_row_aggregation_identities_property(seed):
    """Ahat = (I (x) 1)A, fhat = (I (x) 1)f, and row values add up."""
    rng = np.random.default_rng(seed)
    model, part = rand_twostage(rng, m=2, n=2, delta=3)
    lib = rand_library(rng, model, part, K=2, I=1, J=1)
    semi = build_semi_coarse(model, part, lib)
    delta_r = int(rng.choice([1, 2, 3, 6]))
    coarse = build_coarse(semi, delta_r)
    groups = model.M // delta_r
    R = dense_row_aggregator(groups, delta_r)
    np.testing.assert_allclose(
        coarse.Ahat.toarray(), R @ model.A.toarray(), atol=1e-12, rtol=0
    )
    np.testing.assert_allclose(coarse.fhat, R @ model.f, atol=1e-12, rtol=0)
    np.testing.assert_allclose(
        coarse.Bhat.toarray(), R @ semi.Bbar.toarray(), atol=1e-12, rtol=0
    )
    # aggregated row value at any point equals the sum of fine row values
    z = rng.uniform(-1.0, 1.0, semi.num_vars)
    fine_vals = np.asarray(semi.coupling_matrix() @ z).ravel()
    agg = coarse.to_milp()
    agg_vals = agg.row_values(z)[: coarse.num_aggregated_rows]
    np.testing.assert_allclose(
        agg_vals, fine_vals.reshape(groups, delta_r).sum(axis=1),
        atol=1e-12, rtol=0,
    )


# ------------------------------------------------------------------ semi

class TestSemiCoarse:
    def test_variable_counts(self):
        # K=2 profiles on n=2 groups -> 4 coarse on/off binaries
        rng = np.random.default_rng(2)
        model, part = rand_twostage(rng, m=1, n=2, delta=3)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        flat = semi.to_milp()
        assert semi.num_vars == 1 + 2 * (2 + 2 + 1)
        assert int(flat.integrality.sum()) == 1 + 4
        assert flat.num_rows == model.M + 2 + 2 + 4 + 2

    def test_coupling_rows_first_and_in_order(self):
        rng = np.random.default_rng(4)
        model, part = rand_twostage(rng, m=2, n=2, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        flat = semi.to_milp()
        np.testing.assert_allclose(
            flat.A[: model.M].toarray(), semi.coupling_matrix().toarray()
        )
        np.testing.assert_array_equal(flat.row_ub[: model.M], model.f)
        assert all(
            flat.row_names[r] == f"couple{r}" for r in range(model.M)
        )

    def test_invalid_profile_for_some_group_rejected(self):
        # non-periodic bounds: a profile valid for group 0 only
        model = TwoStageMilp.build(
            a=[0.0], b=np.zeros(4), c=np.ones(4), d=np.ones(4),
            A=np.zeros((2, 1)), B=np.zeros((2, 4)),
            C=np.eye(4)[:2], D=np.zeros((2, 4)),
            f=[1.0, 1.0],
            L=[0.0, 0.0, 0.0, 0.0], U=[1.0, 1.0, 0.2, 0.2],
        )
        part = partition(model, 2)
        lib = ProfileLibrary.build(
            2, np.array([[1.0], [1.0]]), [[np.array([0.9, 0.9])]]
        )
        with pytest.raises(InvalidProfile):
            build_semi_coarse(model, part, lib)

    def test_degenerate_w_block_omitted(self):
        rng = np.random.default_rng(6)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        model = TwoStageMilp.build(
            a=model.a, b=model.b, c=model.c, d=np.zeros(model.N),
            A=model.A, B=model.B, C=model.C,
            D=np.zeros((model.M, model.N)),
            f=model.f, L=model.L, U=model.U,
        )
        lib = rand_library(rng, model, part, K=2, I=1, J=0)
        semi = build_semi_coarse(model, part, lib)
        assert semi.profiles.J == 0
        assert semi.Dbar.shape[1] == 0
        out = bk.solve_milp(semi.to_milp(), bk.SolveSettings(time_limit_s=30))
        assert out.status == bk.OPTIMAL

    def test_tightening_and_equality_with_extracted_profiles(self):
        # semi-coarse optimum >= fine optimum; equality once the fine
        # optimum's own profiles are in the library
        rng = np.random.default_rng(8)
        hit_equality = 0
        for trial in range(6):
            model, part = rand_twostage(rng, m=2, n=2, delta=3, M=4)
            fine_obj, fine_pt = enumerate_fine_optimum(model)
            assert fine_pt is not None
            extracted = extract_library_from_point(
                part, fine_pt, Lref=model.L[:3], Uref=model.U[:3]
            )
            semi = build_semi_coarse(model, part, extracted)
            out = bk.solve_milp(semi.to_milp(), bk.SolveSettings(time_limit_s=60, rel_gap=0.0))
            assert out.status == bk.OPTIMAL
            assert out.objective >= fine_obj - 1e-7
            assert out.objective == pytest.approx(fine_obj, rel=1e-7, abs=1e-7)
            hit_equality += 1
            # arbitrary random library never beats the fine optimum
            lib = rand_library(rng, model, part, K=2, I=2, J=2)
            semi2 = build_semi_coarse(model, part, lib)
            out2 = bk.solve_milp(semi2.to_milp(), bk.SolveSettings(time_limit_s=60, rel_gap=0.0))
            if out2.status == bk.OPTIMAL:
                assert out2.objective >= fine_obj - 1e-7
        assert hit_equality == 6


# ------------------------------------------------------------------ coarse

class TestBuildCoarse:
    def test_row_sum_examples(self):
        # A rows (1,2),(3,4) -> Ahat = (4,6); f = (1,2,3,4) -> fhat = (3,7)
        model = TwoStageMilp.build(
            a=[1.0, 1.0], b=[0.0], c=[0.0], d=[0.0],
            A=[[1.0, 2.0], [3.0, 4.0], [0.0, 0.0], [0.0, 0.0]],
            B=np.zeros((4, 1)), C=np.zeros((4, 1)), D=np.zeros((4, 1)),
            f=[1.0, 2.0, 3.0, 4.0], L=[0.0], U=[1.0],
        )
        part = partition(model, 1)
        lib = ProfileLibrary.build(1, np.array([[1.0]]), [[np.array([0.5])]])
        semi = build_semi_coarse(model, part, lib)
        coarse = build_coarse(semi, 2)
        np.testing.assert_allclose(coarse.Ahat.toarray()[0], [4.0, 6.0])
        np.testing.assert_allclose(coarse.fhat, [3.0, 7.0])

    def test_indivisible_rows(self):
        rng = np.random.default_rng(1)
        model, part = rand_twostage(rng, m=1, n=1, delta=3, M=5)
        lib = rand_library(rng, model, part, K=1, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        with pytest.raises(IndivisibleRows):
            build_coarse(semi, 2)

    def test_default_group_size_is_delta(self):
        rng = np.random.default_rng(1)
        model, part = rand_twostage(rng, m=1, n=2, delta=3)
        lib = rand_library(rng, model, part, K=1, I=1, J=1)
        coarse = build_coarse(build_semi_coarse(model, part, lib))
        assert coarse.delta_r == 3
        assert coarse.num_aggregated_rows == model.M // 3

    def test_relaxation_chain_and_monotonicity(self):
        rng = np.random.default_rng(12)
        for trial in range(5):
            model, part = rand_twostage(rng, m=2, n=2, delta=3)
            lib = rand_library(rng, model, part, K=2, I=1, J=1)
            semi = build_semi_coarse(model, part, lib)
            strict = bk.SolveSettings(time_limit_s=60, rel_gap=0.0)
            semi_out = bk.solve_milp(semi.to_milp(), strict)
            assert semi_out.status == bk.OPTIMAL
            coarse = build_coarse(semi)
            prev = -np.inf
            for rows in ([], [0], [1, 2], list(range(model.M))):
                coarse = add_fine_rows(coarse, rows)
                out = bk.solve_milp(coarse.to_milp(), strict)
                assert out.status == bk.OPTIMAL
                assert out.objective <= semi_out.objective + 1e-7
                assert out.objective >= prev - 1e-7
                prev = out.objective
            # with every fine row restored the two optima coincide
            assert out.objective == pytest.approx(
                semi_out.objective, rel=1e-7, abs=1e-7
            )


class TestAddFineRows:
    def setup_method(self):
        rng = np.random.default_rng(3)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, model, part, K=1, I=1, J=1)
        self.model = model
        self.coarse = build_coarse(build_semi_coarse(model, part, lib))

    def test_empty_set_unchanged(self):
        assert add_fine_rows(self.coarse, []) is self.coarse

    def test_idempotent(self):
        once = add_fine_rows(self.coarse, [3])
        twice = add_fine_rows(once, [3])
        assert twice.extension == (3,)

    def test_monotone_growth(self):
        grown = add_fine_rows(add_fine_rows(self.coarse, [2]), [0, 2, 3])
        assert grown.extension == (0, 2, 3)

    def test_bad_index(self):
        with pytest.raises(BadRowIndex):
            add_fine_rows(self.coarse, [self.model.M])
        with pytest.raises(BadRowIndex):
            add_fine_rows(self.coarse, [-1])

    def test_extension_rows_materialized(self):
        grown = add_fine_rows(self.coarse, [1])
        flat = grown.to_milp()
        agg = self.coarse.num_aggregated_rows
        semi_flat = self.coarse.semi.to_milp()
        np.testing.assert_allclose(
            flat.A[agg].toarray(), semi_flat.A[1].toarray()
        )
        assert flat.row_ub[agg] == self.model.f[1]
        assert flat.row_names[agg] == "couple1"


# ------------------------------------------------------------------ sidecar

class TestProvenance:
    def test_semi_columns(self):
        rng = np.random.default_rng(5)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, model, part, K=2, I=2, J=1)
        semi = build_semi_coarse(model, part, lib)
        doc = provenance_sidecar(semi)
        assert doc["kind"] == "semi_coarse"
        assert doc["x_columns"][0] == {"group": 0, "profile": 0}
        assert doc["x_columns"][-1] == {"group": 1, "profile": 1}
        assert len(doc["v_columns"]) == 2 * semi.profiles.total_I
        assert doc["v_columns"][0]["ordinal"] == 0

    def test_coarse_rows(self):
        rng = np.random.default_rng(5)
        model, part = rand_twostage(rng, m=1, n=2, delta=2)
        lib = rand_library(rng, model, part, K=1, I=1, J=0)
        coarse = add_fine_rows(
            build_coarse(build_semi_coarse(model, part, lib)), [1]
        )
        doc = provenance_sidecar(coarse)
        assert doc["kind"] == "coarse"
        assert doc["aggregated_rows"][0]["fine_rows"] == [0, 1]
        assert doc["extension_rows"] == [1]

    def test_lifted_coarse_solution_after_all_rows(self):
        # coarse + full extension solves; its point lifts feasibly
        rng = np.random.default_rng(10)
        model, part = rand_twostage(rng, m=2, n=2, delta=2)
        lib = rand_library(rng, model, part, K=2, I=1, J=1)
        semi = build_semi_coarse(model, part, lib)
        coarse = add_fine_rows(build_coarse(semi), range(model.M))
        out = bk.solve_milp(coarse.to_milp(), bk.SolveSettings(time_limit_s=30))
        assert out.status == bk.OPTIMAL
        cp = semi.point_from_vector(out.x)
        pt = lift_solution(part, semi.profiles, cp)
        assert check_feasible(model, pt).feasible
