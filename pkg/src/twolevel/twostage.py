"""Block-structured two-stage MILP:

    min  a'y + b'x + c'v + d'w
    s.t. A y + B x + C v + D w <= f
         y in {0,1}^m, x in {0,1}^N
         L o x <= v <= U o x   (switched bounds, o = elementwise)
         w >= 0

All coupling rows are "<="; callers with ">=" rows negate them before
construction.  The second stage has one x/v/w triple per fine index
i = 1..N; a VariablePartition groups those indices into n = N/delta
consecutive blocks of equal size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import (
    BoundOrderViolation,
    DimensionMismatch,
    IndivisibleHorizon,
    NonBinaryInput,
    NonFiniteCoefficient,
    SelectionConstraintViolated,
)
from .milp import MilpModel

ROW_TOL = 1e-6
INT_TOL = 1e-5


def _csr(mat, shape, name):
    out = sp.csr_matrix(mat, dtype=float)
    if out.shape != shape:
        raise DimensionMismatch(f"{name} is {out.shape}, expected {shape}")
    if out.nnz and not np.all(np.isfinite(out.data)):
        raise NonFiniteCoefficient(f"{name} has non-finite entries")
    return out


def _vec(v, length, name, finite=True):
    out = np.asarray(v, dtype=float).ravel()
    if out.size != length:
        raise DimensionMismatch(f"{name}: expected length {length}, got {out.size}")
    if finite and not np.all(np.isfinite(out)):
        raise NonFiniteCoefficient(f"{name} has non-finite entries")
    return out


@dataclass(frozen=True)
class TwoStageMilp:
    """Immutable data of the block model; see module docstring."""

    a: np.ndarray       # (m,)
    b: np.ndarray       # (N,)
    c: np.ndarray       # (N,)
    d: np.ndarray       # (N,)
    A: sp.csr_matrix    # (M, m)
    B: sp.csr_matrix    # (M, N)
    C: sp.csr_matrix    # (M, N)
    D: sp.csr_matrix    # (M, N)
    f: np.ndarray       # (M,)
    L: np.ndarray       # (N,)
    U: np.ndarray       # (N,)

    @property
    def m(self) -> int:
        return int(self.a.size)

    @property
    def N(self) -> int:
        return int(self.b.size)

    @property
    def M(self) -> int:
        return int(self.f.size)

    @staticmethod
    def build(a, b, c, d, A, B, C, D, f, L, U) -> "TwoStageMilp":
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        f = np.asarray(f, dtype=float).ravel()
        m, N, M = a.size, b.size, f.size
        model = TwoStageMilp(
            a=a,
            b=b,
            c=_vec(c, N, "c"),
            d=_vec(d, N, "d"),
            A=_csr(A, (M, m), "A"),
            B=_csr(B, (M, N), "B"),
            C=_csr(C, (M, N), "C"),
            D=_csr(D, (M, N), "D"),
            f=_vec(f, M, "f"),
            L=_vec(L, N, "L"),
            U=_vec(U, N, "U"),
        )
        validate(model)
        return model

    def objective(self, point: "FinePoint") -> float:
        return float(
            self.a @ point.y + self.b @ point.x + self.c @ point.v + self.d @ point.w
        )


def validate(model: TwoStageMilp) -> None:
    """Raise unless all structural invariants hold."""
    m, N, M = model.m, model.N, model.M
    for name, want in (("c", N), ("d", N), ("f", M), ("L", N), ("U", N)):
        arr = getattr(model, name)
        if arr.size != want:
            raise DimensionMismatch(f"{name}: expected length {want}, got {arr.size}")
    for name, shape in (("A", (M, m)), ("B", (M, N)), ("C", (M, N)), ("D", (M, N))):
        mat = getattr(model, name)
        if mat.shape != shape:
            raise DimensionMismatch(f"{name} is {mat.shape}, expected {shape}")
        if mat.nnz and not np.all(np.isfinite(mat.data)):
            raise NonFiniteCoefficient(f"{name} has non-finite entries")
    for name in ("a", "b", "c", "d", "f", "L", "U"):
        if not np.all(np.isfinite(getattr(model, name))):
            raise NonFiniteCoefficient(f"{name} has non-finite entries")
    if np.any(model.L > model.U):
        i = int(np.argmax(model.L > model.U))
        raise BoundOrderViolation(f"L > U at second-stage index {i}")


@dataclass(frozen=True)
class VariablePartition:
    """n consecutive groups of size delta covering second-stage indices."""

    delta: int
    n: int

    @property
    def N(self) -> int:
        return self.delta * self.n

    def group(self, g: int) -> slice:
        if not 0 <= g < self.n:
            raise IndexError(f"group {g} out of range [0, {self.n})")
        return slice(g * self.delta, (g + 1) * self.delta)


def partition(model: TwoStageMilp, delta: int) -> VariablePartition:
    delta = int(delta)
    if delta < 1:
        raise IndivisibleHorizon(f"group size must be >= 1, got {delta}")
    if model.N % delta:
        raise IndivisibleHorizon(f"group size {delta} does not divide N={model.N}")
    return VariablePartition(delta=delta, n=model.N // delta)


@dataclass
class FinePoint:
    """Candidate assignment of the fine-scale decision variables."""

    y: np.ndarray
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @staticmethod
    def zeros(m: int, N: int) -> "FinePoint":
        return FinePoint(np.zeros(m), np.zeros(N), np.zeros(N), np.zeros(N))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.y, self.x, self.v, self.w])

    @staticmethod
    def from_vector(z, m: int, N: int) -> "FinePoint":
        z = np.asarray(z, dtype=float).ravel()
        if z.size != m + 3 * N:
            raise DimensionMismatch(f"expected length {m + 3 * N}, got {z.size}")
        return FinePoint(
            y=z[:m].copy(),
            x=z[m:m + N].copy(),
            v=z[m + N:m + 2 * N].copy(),
            w=z[m + 2 * N:].copy(),
        )


@dataclass
class FeasibilityVerdict:
    feasible: bool
    max_row_violation: float
    max_bound_violation: float
    max_integrality_violation: float
    row_violations: List[Tuple[int, float]] = field(default_factory=list)
    bound_violations: List[Tuple[str, int, float]] = field(default_factory=list)
    integrality_violations: List[Tuple[str, int, float]] = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max(
            self.max_row_violation,
            self.max_bound_violation,
            self.max_integrality_violation,
        )


def check_feasible(model: TwoStageMilp, point: FinePoint, tol: float = ROW_TOL,
                   int_tol: float = INT_TOL) -> FeasibilityVerdict:
    """Evaluate every constraint of the block model at `point`.

    Rows, switched bounds and simple bounds are measured against `tol`;
    integrality of y and x against `int_tol`.  Every violation beyond
    its tolerance is listed with its magnitude.
    """
    y = _vec(point.y, model.m, "y", finite=False)
    x = _vec(point.x, model.N, "x", finite=False)
    v = _vec(point.v, model.N, "v", finite=False)
    w = _vec(point.w, model.N, "w", finite=False)

    rows = np.asarray(
        model.A @ y + model.B @ x + model.C @ v + model.D @ w
    ).ravel() - model.f
    row_viol = np.maximum(rows, 0.0)

    bound_list = []
    lower = model.L * x - v          # L o x <= v
    upper = v - model.U * x          # v <= U o x
    for name, resid in (
        ("v_lower", lower), ("v_upper", upper), ("w_lower", -w),
        ("y_lower", -y), ("y_upper", y - 1.0),
        ("x_lower", -x), ("x_upper", x - 1.0),
    ):
        viol = np.maximum(resid, 0.0)
        for i in np.nonzero(viol > tol)[0]:
            bound_list.append((name, int(i), float(viol[i])))
    max_bound = max((amt for _, _, amt in bound_list), default=0.0)
    # track the true maximum even when below tol, for reporting
    for resid in (lower, upper, -w, -y, y - 1.0, -x, x - 1.0):
        peak = float(np.max(resid, initial=0.0))
        max_bound = max(max_bound, max(peak, 0.0))

    int_list = []
    for name, arr in (("y", y), ("x", x)):
        frac = np.abs(arr - np.round(arr))
        for i in np.nonzero(frac > int_tol)[0]:
            int_list.append((name, int(i), float(frac[i])))
    max_int = max(
        float(np.max(np.abs(y - np.round(y)), initial=0.0)),
        float(np.max(np.abs(x - np.round(x)), initial=0.0)),
    )

    row_list = [(int(i), float(row_viol[i])) for i in np.nonzero(row_viol > tol)[0]]
    return FeasibilityVerdict(
        feasible=not row_list and not bound_list and not int_list,
        max_row_violation=float(np.max(row_viol, initial=0.0)),
        max_bound_violation=max_bound,
        max_integrality_violation=max_int,
        row_violations=row_list,
        bound_violations=bound_list,
        integrality_violations=int_list,
    )


def lift_solution(part: VariablePartition, profiles, coarse_point,
                  tol: float = ROW_TOL, int_tol: float = INT_TOL) -> FinePoint:
    """Map a profile-space point back to fine scale.

    x_i = sum_k xbar_ik Xbar_k, v_i = sum_{k,j} vbar_ijk Vbar_jk and
    w_i = sum_j wbar_ij Wbar_j, applied per group.  The selection block
    is verified first: sum_k xbar_ik <= 1, sum_{k,j} vbar_ijk <= 1 with
    sum_j vbar_ijk = xbar_ik, sum_j wbar_ij <= 1, and xbar binary.
    """
    n, delta = part.n, part.delta
    if profiles.delta != delta:
        raise DimensionMismatch(
            f"profile length {profiles.delta} != partition group size {delta}"
        )
    def as_groups(arr):
        arr = np.asarray(arr, dtype=float)
        if arr.size == 0:
            return arr.reshape(n, 0)
        return arr.reshape(n, -1)

    xbar = as_groups(coarse_point.xbar)
    vbar = as_groups(coarse_point.vbar)
    wbar = as_groups(coarse_point.wbar)
    K = profiles.K
    if xbar.shape[1] != K:
        raise DimensionMismatch(f"xbar has {xbar.shape[1]} columns, expected {K}")
    if vbar.shape[1] != profiles.total_I:
        raise DimensionMismatch(
            f"vbar has {vbar.shape[1]} columns, expected {profiles.total_I}"
        )
    if wbar.shape[1] != profiles.J:
        raise DimensionMismatch(f"wbar has {wbar.shape[1]} columns, expected {profiles.J}")

    if np.any(np.abs(xbar - np.round(xbar)) > int_tol):
        raise NonBinaryInput("xbar has fractional entries beyond tolerance")
    xb = np.round(xbar)

    if np.any(xb.sum(axis=1) > 1 + tol):
        g = int(np.argmax(xb.sum(axis=1)))
        raise SelectionConstraintViolated(f"sum_k xbar > 1 in group {g}")
    if np.any(vbar.sum(axis=1) > 1 + tol):
        g = int(np.argmax(vbar.sum(axis=1)))
        raise SelectionConstraintViolated(f"sum_kj vbar > 1 in group {g}")
    if np.any(wbar.sum(axis=1) > 1 + tol):
        g = int(np.argmax(wbar.sum(axis=1)))
        raise SelectionConstraintViolated(f"sum_j wbar > 1 in group {g}")
    for k in range(K):
        block = vbar[:, profiles.v_slice(k)].sum(axis=1)
        if np.any(np.abs(block - xb[:, k]) > tol):
            g = int(np.argmax(np.abs(block - xb[:, k])))
            raise SelectionConstraintViolated(
                f"sum_j vbar != xbar for profile {k} in group {g}"
            )

    x = (xb @ profiles.Xbar.T).ravel()
    v = (vbar @ profiles.Vbar.T).ravel()
    w = (wbar @ profiles.Wbar.T).ravel() if profiles.J else np.zeros(n * delta)
    return FinePoint(
        y=np.asarray(coarse_point.y, dtype=float).copy(), x=x, v=v, w=w
    )


# ------------------------------------------------------------------ conversion

def to_milp(model: TwoStageMilp) -> MilpModel:
    """Flatten to a single MILP over z = [y, x, v, w].

    Row order: the M coupling rows first, then N switched upper bounds
    v - U o x <= 0, then N switched lower bounds L o x - v <= 0.
    """
    m, N, M = model.m, model.N, model.M
    eye = sp.eye(N, format="csr")
    zero_m = sp.csr_matrix((N, m))
    zero_n = sp.csr_matrix((N, N))
    coupling = sp.hstack([model.A, model.B, model.C, model.D], format="csr")
    vub = sp.hstack([zero_m, sp.diags(-model.U), eye, zero_n], format="csr")
    vlb = sp.hstack([zero_m, sp.diags(model.L), -eye, zero_n], format="csr")
    A = sp.vstack([coupling, vub, vlb], format="csr")

    inf = np.inf
    obj = np.concatenate([model.a, model.b, model.c, model.d])
    row_ub = np.concatenate([model.f, np.zeros(2 * N)])
    row_lb = np.full(M + 2 * N, -inf)
    lb = np.concatenate(
        [np.zeros(m), np.zeros(N), np.minimum(model.L, 0.0), np.zeros(N)]
    )
    ub = np.concatenate(
        [np.ones(m), np.ones(N), np.maximum(model.U, 0.0), np.full(N, inf)]
    )
    integrality = np.concatenate(
        [np.ones(m + N, dtype=np.int8), np.zeros(2 * N, dtype=np.int8)]
    )
    names = (
        [f"y{j}" for j in range(m)]
        + [f"x{i}" for i in range(N)]
        + [f"v{i}" for i in range(N)]
        + [f"w{i}" for i in range(N)]
    )
    row_names = (
        [f"couple{r}" for r in range(M)]
        + [f"vub{i}" for i in range(N)]
        + [f"vlb{i}" for i in range(N)]
    )
    return MilpModel(
        obj=obj, A=A, row_lb=row_lb, row_ub=row_ub, lb=lb, ub=ub,
        integrality=integrality, obj_const=0.0,
        var_names=tuple(names), row_names=tuple(row_names),
    )


def point_from_milp_solution(model: TwoStageMilp, z) -> FinePoint:
    return FinePoint.from_vector(z, model.m, model.N)


# ------------------------------------------------------------------ JSON IO

def _sparse_to_doc(mat: sp.csr_matrix) -> dict:
    coo = mat.tocoo()
    return {"row": coo.row.tolist(), "col": coo.col.tolist(), "data": coo.data.tolist()}


def _sparse_from_doc(doc: dict, shape) -> sp.csr_matrix:
    return sp.coo_matrix((doc["data"], (doc["row"], doc["col"])), shape=shape).tocsr()


def instance_to_json_dict(model: TwoStageMilp) -> dict:
    return {
        "format": "twolevel-twostage",
        "version": 1,
        "m": model.m,
        "N": model.N,
        "M": model.M,
        "a": model.a.tolist(),
        "b": model.b.tolist(),
        "c": model.c.tolist(),
        "d": model.d.tolist(),
        "f": model.f.tolist(),
        "L": model.L.tolist(),
        "U": model.U.tolist(),
        "A": _sparse_to_doc(model.A),
        "B": _sparse_to_doc(model.B),
        "C": _sparse_to_doc(model.C),
        "D": _sparse_to_doc(model.D),
    }


def instance_from_json_dict(doc: dict) -> TwoStageMilp:
    if doc.get("format") != "twolevel-twostage":
        raise ValueError("not a twolevel-twostage JSON document")
    m, N, M = doc["m"], doc["N"], doc["M"]
    return TwoStageMilp.build(
        a=doc["a"], b=doc["b"], c=doc["c"], d=doc["d"],
        A=_sparse_from_doc(doc["A"], (M, m)),
        B=_sparse_from_doc(doc["B"], (M, N)),
        C=_sparse_from_doc(doc["C"], (M, N)),
        D=_sparse_from_doc(doc["D"], (M, N)),
        f=doc["f"], L=doc["L"], U=doc["U"],
    )


def save_instance(model: TwoStageMilp, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json_dict(model), fh)


def load_instance(path) -> TwoStageMilp:
    with open(path) as fh:
        return instance_from_json_dict(json.load(fh))
