"""Profile-based coarsening of the two-stage block model.

Second-stage variables are replaced by selections from a library of
delta-length profiles: binary on/off profiles Xbar_k, per-profile real
profiles Vbar_jk valid between the switched bounds, and non-negative
profiles Wbar_j.  Substituting the change of variables into the fine
model and collapsing each group column block against the profile
matrices yields the semi-coarse model; additionally summing each group
of coupling rows yields the coarse model, whose solution space is then
re-tightened row by row as fine rows are added back.

Both reduced models expose the same flat variable order
z = [y, xbar, vbar, wbar] (group-major within each block), so a point
of one evaluates directly in the other.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import (
    BadRowIndex,
    DeltaMismatch,
    DimensionMismatch,
    IndivisibleRows,
    InvalidProfile,
)
from .milp import MilpModel
from .twostage import TwoStageMilp, VariablePartition

PROFILE_TOL = 1e-8


# ---------------------------------------------------------------- library

@dataclass(frozen=True)
class ProfileLibrary:
    """Profile matrices of one group length delta.

    Xbar is delta x K with binary columns.  Vbar is delta x sum(i_counts)
    where the first i_counts[0] columns belong to profile 0, the next
    i_counts[1] to profile 1, and so on.  Wbar is delta x J with
    non-negative columns.  Lref/Uref, when given, are delta-length
    switched-bound references used to validate Vbar columns.
    """

    delta: int
    Xbar: np.ndarray
    Vbar: np.ndarray
    Wbar: np.ndarray
    i_counts: Tuple[int, ...]
    Lref: Optional[np.ndarray] = None
    Uref: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.Xbar.shape[1]

    @property
    def total_I(self) -> int:
        return self.Vbar.shape[1]

    @property
    def J(self) -> int:
        return self.Wbar.shape[1]

    @property
    def v_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.i_counts)]).astype(int)

    def v_slice(self, k: int) -> slice:
        off = self.v_offsets
        return slice(int(off[k]), int(off[k + 1]))

    def v_parent(self, col: int) -> Tuple[int, int]:
        """Map a Vbar column index to (profile k, ordinal j within k)."""
        off = self.v_offsets
        k = int(np.searchsorted(off, col, side="right") - 1)
        return k, col - int(off[k])

    @staticmethod
    def build(delta, Xbar, Vbar_per_k: Sequence[Sequence], Wbar=(),
              Lref=None, Uref=None) -> "ProfileLibrary":
        """Assemble from per-profile column lists and validate."""
        delta = int(delta)
        Xb = np.atleast_2d(np.asarray(Xbar, dtype=float))
        if Xb.shape[0] != delta:
            Xb = Xb.T
        if Xb.shape[0] != delta:
            raise DimensionMismatch(f"Xbar rows {Xb.shape[0]} != delta {delta}")
        K = Xb.shape[1]
        if len(Vbar_per_k) != K:
            raise DimensionMismatch(
                f"Vbar groups {len(Vbar_per_k)} != profile count {K}"
            )
        counts = tuple(len(cols) for cols in Vbar_per_k)
        if sum(counts):
            Vb = np.column_stack(
                [np.asarray(col, dtype=float) for cols in Vbar_per_k for col in cols]
            )
        else:
            Vb = np.zeros((delta, 0))
        Wlist = [np.asarray(colw, dtype=float) for colw in Wbar]
        Wb = np.column_stack(Wlist) if Wlist else np.zeros((delta, 0))
        lib = ProfileLibrary(
            delta=delta, Xbar=Xb, Vbar=Vb, Wbar=Wb, i_counts=counts,
            Lref=None if Lref is None else np.asarray(Lref, dtype=float).ravel(),
            Uref=None if Uref is None else np.asarray(Uref, dtype=float).ravel(),
        )
        lib.validate()
        return lib

    def validate(self, tol: float = PROFILE_TOL) -> None:
        if self.Xbar.shape[0] != self.delta:
            raise DimensionMismatch("Xbar row count != delta")
        if self.Vbar.shape[0] != self.delta and self.total_I:
            raise DimensionMismatch("Vbar row count != delta")
        if self.Wbar.shape[0] != self.delta and self.J:
            raise DimensionMismatch("Wbar row count != delta")
        if sum(self.i_counts) != self.total_I:
            raise DimensionMismatch("i_counts inconsistent with Vbar width")
        if len(self.i_counts) != self.K:
            raise DimensionMismatch("i_counts length != K")
        offgrid = np.abs(self.Xbar - np.round(self.Xbar))
        if np.any(offgrid > tol) or np.any((np.round(self.Xbar) != 0) & (np.round(self.Xbar) != 1)):
            k = int(np.argwhere(offgrid > tol)[0][1]) if np.any(offgrid > tol) else -1
            raise InvalidProfile(f"Xbar column {k} is not binary")
        if self.J and np.any(self.Wbar < -tol):
            j = int(np.argwhere(self.Wbar < -tol)[0][1])
            raise InvalidProfile(f"Wbar column {j} has negative entries")
        if self.Lref is not None and self.Uref is not None and self.total_I:
            for k in range(self.K):
                self.check_switched_bounds(k, self.Lref, self.Uref, tol)

    def check_switched_bounds(self, k: int, L, U, tol: float = PROFILE_TOL) -> None:
        """Verify L o Xbar_k <= Vbar_jk <= U o Xbar_k for every j under k."""
        L = np.asarray(L, dtype=float).ravel()
        U = np.asarray(U, dtype=float).ravel()
        if L.size != self.delta or U.size != self.delta:
            raise DimensionMismatch("bound reference length != delta")
        lo = (L * self.Xbar[:, k])[:, None]
        hi = (U * self.Xbar[:, k])[:, None]
        block = self.Vbar[:, self.v_slice(k)]
        if block.size == 0:
            return
        if np.any(block < lo - tol) or np.any(block > hi + tol):
            j = int(np.argwhere((block < lo - tol) | (block > hi + tol))[0][1])
            raise InvalidProfile(
                f"Vbar column {j} under profile {k} violates switched bounds"
            )

    def dedupe(self) -> "ProfileLibrary":
        """Drop exact-duplicate columns (warning when any are found).

        Duplicate Xbar columns are merged, pooling their Vbar blocks;
        duplicate Vbar columns within one profile and duplicate Wbar
        columns are dropped.
        """
        dropped = 0
        keep_k: List[int] = []
        merged_into = {}
        seen = {}
        for k in range(self.K):
            key = self.Xbar[:, k].tobytes()
            if key in seen:
                merged_into[k] = seen[key]
                dropped += 1
            else:
                seen[key] = k
                keep_k.append(k)
        v_cols_per_new_k: List[List[np.ndarray]] = [[] for _ in keep_k]
        new_index = {k: i for i, k in enumerate(keep_k)}
        for k in range(self.K):
            target = new_index[merged_into.get(k, k)]
            block = self.Vbar[:, self.v_slice(k)]
            for col in block.T:
                if any(np.array_equal(col, kept) for kept in v_cols_per_new_k[target]):
                    dropped += 1
                else:
                    v_cols_per_new_k[target].append(col)
        w_cols: List[np.ndarray] = []
        for col in self.Wbar.T:
            if any(np.array_equal(col, kept) for kept in w_cols):
                dropped += 1
            else:
                w_cols.append(col)
        if not dropped:
            return self
        warnings.warn(
            f"profile library contained {dropped} duplicate column(s); deduplicated",
            stacklevel=2,
        )
        return ProfileLibrary.build(
            self.delta,
            self.Xbar[:, keep_k],
            [[np.asarray(csel) for csel in cols] for cols in v_cols_per_new_k],
            w_cols,
            Lref=self.Lref,
            Uref=self.Uref,
        )

    def to_json_dict(self) -> dict:
        return {
            "format": "twolevel-profiles",
            "version": 1,
            "delta": self.delta,
            "Xbar": self.Xbar.tolist(),
            "Vbar": self.Vbar.tolist(),
            "Wbar": self.Wbar.tolist(),
            "i_counts": list(self.i_counts),
            "Lref": None if self.Lref is None else self.Lref.tolist(),
            "Uref": None if self.Uref is None else self.Uref.tolist(),
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ProfileLibrary":
        if doc.get("format") != "twolevel-profiles":
            raise ValueError("not a twolevel-profiles JSON document")
        delta = int(doc["delta"])
        def arr(key, width_hint):
            data = np.asarray(doc[key], dtype=float)
            if data.size == 0:
                return np.zeros((delta, 0))
            return data.reshape(delta, -1)
        lib = ProfileLibrary(
            delta=delta,
            Xbar=arr("Xbar", None),
            Vbar=arr("Vbar", None),
            Wbar=arr("Wbar", None),
            i_counts=tuple(int(v) for v in doc["i_counts"]),
            Lref=None if doc.get("Lref") is None else np.asarray(doc["Lref"], float),
            Uref=None if doc.get("Uref") is None else np.asarray(doc["Uref"], float),
        )
        lib.validate()
        return lib


# ---------------------------------------------------------------- points

@dataclass
class CoarsePoint:
    """Assignment of the reduced variables, group-major."""

    y: np.ndarray
    xbar: np.ndarray  # (n, K)
    vbar: np.ndarray  # (n, total_I)
    wbar: np.ndarray  # (n, J)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.y, self.xbar.ravel(), self.vbar.ravel(), self.wbar.ravel()]
        )

    @staticmethod
    def from_vector(z, m: int, n: int, profiles: ProfileLibrary) -> "CoarsePoint":
        z = np.asarray(z, dtype=float).ravel()
        K, tI, J = profiles.K, profiles.total_I, profiles.J
        want = m + n * (K + tI + J)
        if z.size != want:
            raise DimensionMismatch(f"expected length {want}, got {z.size}")
        pos = m
        xbar = z[pos:pos + n * K].reshape(n, K).copy()
        pos += n * K
        vbar = z[pos:pos + n * tI].reshape(n, tI).copy()
        pos += n * tI
        wbar = z[pos:].reshape(n, J).copy()
        return CoarsePoint(y=z[:m].copy(), xbar=xbar, vbar=vbar, wbar=wbar)


# ---------------------------------------------------------------- aggregation

def aggregate_columns(model: TwoStageMilp, part: VariablePartition,
                      profiles: ProfileLibrary):
    """Collapse each group's column block against the profile matrices.

    Returns (bbar, cbar, dbar, Bbar, Cbar, Dbar) where e.g. the columns
    of Bbar are the per-group products [B_1 Xbar : ... : B_n Xbar].
    """
    if profiles.delta != part.delta:
        raise DeltaMismatch(
            f"profile length {profiles.delta} != group size {part.delta}"
        )
    if part.n * part.delta != model.N:
        raise DimensionMismatch("partition does not cover the model horizon")
    n, delta = part.n, part.delta

    def collapse(mat: sp.csr_matrix, prof: np.ndarray) -> sp.csr_matrix:
        if prof.shape[1] == 0:
            return sp.csr_matrix((mat.shape[0], 0))
        csc = mat.tocsc()
        prof_sp = sp.csr_matrix(prof)
        blocks = [
            csc[:, g * delta:(g + 1) * delta] @ prof_sp for g in range(n)
        ]
        return sp.hstack(blocks, format="csr")

    def collapse_cost(vec: np.ndarray, prof: np.ndarray) -> np.ndarray:
        if prof.shape[1] == 0:
            return np.zeros(0)
        return (vec.reshape(n, delta) @ prof).ravel()

    bbar = collapse_cost(model.b, profiles.Xbar)
    cbar = collapse_cost(model.c, profiles.Vbar)
    dbar = collapse_cost(model.d, profiles.Wbar)
    Bbar = collapse(model.B, profiles.Xbar)
    Cbar = collapse(model.C, profiles.Vbar)
    Dbar = collapse(model.D, profiles.Wbar)
    return bbar, cbar, dbar, Bbar, Cbar, Dbar


# ---------------------------------------------------------------- semi-coarse

@dataclass(frozen=True)
class SemiCoarseModel:
    """Fine coupling rows over profile-selection variables."""

    base: TwoStageMilp
    part: VariablePartition
    profiles: ProfileLibrary
    bbar: np.ndarray
    cbar: np.ndarray
    dbar: np.ndarray
    Bbar: sp.csr_matrix
    Cbar: sp.csr_matrix
    Dbar: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.part.n

    @property
    def num_coupling_rows(self) -> int:
        return self.base.M

    @property
    def num_vars(self) -> int:
        p = self.profiles
        return self.base.m + self.n * (p.K + p.total_I + p.J)

    # provenance ------------------------------------------------------

    def x_provenance(self) -> List[Tuple[int, int]]:
        """Coarse x column -> (group, profile)."""
        K = self.profiles.K
        return [(g, k) for g in range(self.n) for k in range(K)]

    def v_provenance(self) -> List[Tuple[int, int, int]]:
        """Coarse v column -> (group, profile k, ordinal j)."""
        out = []
        for g in range(self.n):
            for col in range(self.profiles.total_I):
                k, j = self.profiles.v_parent(col)
                out.append((g, k, j))
        return out

    def w_provenance(self) -> List[Tuple[int, int]]:
        return [(g, j) for g in range(self.n) for j in range(self.profiles.J)]

    # assembly --------------------------------------------------------

    def selection_rows(self) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray, List[str]]:
        """Selection block over [y, xbar, vbar, wbar].

        Per group: sum_k xbar <= 1; sum_kj vbar <= 1; sum_j vbar_k -
        xbar_k = 0 for each profile k; sum_j wbar <= 1.
        """
        m = self.base.m
        n = self.n
        p = self.profiles
        K, tI, J = p.K, p.total_I, p.J
        nv = self.num_vars
        x0 = m
        v0 = m + n * K
        w0 = v0 + n * tI

        rows, cols, vals = [], [], []
        lb, ub, names = [], [], []
        r = 0
        if K:
            for g in range(n):
                rows.extend([r] * K)
                cols.extend(range(x0 + g * K, x0 + (g + 1) * K))
                vals.extend([1.0] * K)
                lb.append(-np.inf)
                ub.append(1.0)
                names.append(f"selx_g{g}")
                r += 1
        if tI:
            for g in range(n):
                rows.extend([r] * tI)
                cols.extend(range(v0 + g * tI, v0 + (g + 1) * tI))
                vals.extend([1.0] * tI)
                lb.append(-np.inf)
                ub.append(1.0)
                names.append(f"selv_g{g}")
                r += 1
            off = p.v_offsets
            for g in range(n):
                for k in range(K):
                    span = range(v0 + g * tI + off[k], v0 + g * tI + off[k + 1])
                    rows.extend([r] * (len(range(off[k], off[k + 1])) + 1))
                    cols.extend(list(span) + [x0 + g * K + k])
                    vals.extend([1.0] * (off[k + 1] - off[k]) + [-1.0])
                    lb.append(0.0)
                    ub.append(0.0)
                    names.append(f"linkv_g{g}_k{k}")
                    r += 1
        if J:
            for g in range(n):
                rows.extend([r] * J)
                cols.extend(range(w0 + g * J, w0 + (g + 1) * J))
                vals.extend([1.0] * J)
                lb.append(-np.inf)
                ub.append(1.0)
                names.append(f"selw_g{g}")
                r += 1
        S = sp.coo_matrix((vals, (rows, cols)), shape=(r, nv)).tocsr()
        return S, np.array(lb), np.array(ub), names

    def coupling_matrix(self) -> sp.csr_matrix:
        return sp.hstack(
            [self.base.A, self.Bbar, self.Cbar, self.Dbar], format="csr"
        )

    def objective_vector(self) -> np.ndarray:
        return np.concatenate([self.base.a, self.bbar, self.cbar, self.dbar])

    def var_bounds(self):
        m, n = self.base.m, self.n
        p = self.profiles
        lb = np.zeros(self.num_vars)
        ub = np.ones(self.num_vars)
        integrality = np.zeros(self.num_vars, dtype=np.int8)
        integrality[:m + n * p.K] = 1
        return lb, ub, integrality

    def var_names(self) -> List[str]:
        m, n = self.base.m, self.n
        p = self.profiles
        names = [f"y{j}" for j in range(m)]
        names += [f"xb_g{g}_k{k}" for g in range(n) for k in range(p.K)]
        names += [
            f"vb_g{g}_k{k}_j{j}"
            for g in range(n)
            for (k, j) in (p.v_parent(col) for col in range(p.total_I))
        ]
        names += [f"wb_g{g}_j{j}" for g in range(n) for j in range(p.J)]
        return names

    def to_milp(self) -> MilpModel:
        """Flatten; the first M rows are the fine coupling rows in order."""
        S, slb, sub, snames = self.selection_rows()
        A = sp.vstack([self.coupling_matrix(), S], format="csr")
        M = self.base.M
        row_lb = np.concatenate([np.full(M, -np.inf), slb])
        row_ub = np.concatenate([self.base.f, sub])
        lb, ub, integrality = self.var_bounds()
        return MilpModel(
            obj=self.objective_vector(),
            A=A,
            row_lb=row_lb,
            row_ub=row_ub,
            lb=lb,
            ub=ub,
            integrality=integrality,
            obj_const=0.0,
            var_names=tuple(self.var_names()),
            row_names=tuple([f"couple{r}" for r in range(M)] + snames),
        )

    def point_from_vector(self, z) -> CoarsePoint:
        return CoarsePoint.from_vector(z, self.base.m, self.n, self.profiles)

    def coupling_residuals(self, z) -> np.ndarray:
        """Violation of each fine coupling row at a reduced point."""
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.num_vars:
            raise DimensionMismatch(
                f"expected length {self.num_vars}, got {z.size}"
            )
        vals = np.asarray(self.coupling_matrix() @ z).ravel()
        return np.maximum(vals - self.base.f, 0.0)


def build_semi_coarse(model: TwoStageMilp, part: VariablePartition,
                      profiles: ProfileLibrary) -> SemiCoarseModel:
    """Substitute profile selections into the fine model."""
    if profiles.delta != part.delta:
        raise DeltaMismatch(
            f"profile length {profiles.delta} != group size {part.delta}"
        )
    profiles.validate()
    profiles = profiles.dedupe()
    if profiles.total_I:
        for g in range(part.n):
            sel = part.group(g)
            for k in range(profiles.K):
                profiles.check_switched_bounds(k, model.L[sel], model.U[sel])
    bbar, cbar, dbar, Bbar, Cbar, Dbar = aggregate_columns(model, part, profiles)
    return SemiCoarseModel(
        base=model, part=part, profiles=profiles,
        bbar=bbar, cbar=cbar, dbar=dbar, Bbar=Bbar, Cbar=Cbar, Dbar=Dbar,
    )


# ---------------------------------------------------------------- coarse

@dataclass(frozen=True)
class CoarseModel:
    """Row-aggregated relaxation of a semi-coarse model.

    Aggregated row g is the sum of fine coupling rows
    [g*delta_r, (g+1)*delta_r); `extension` lists fine coupling rows
    re-added individually.
    """

    semi: SemiCoarseModel
    delta_r: int
    Ahat: sp.csr_matrix
    Bhat: sp.csr_matrix
    Chat: sp.csr_matrix
    Dhat: sp.csr_matrix
    fhat: np.ndarray
    extension: Tuple[int, ...] = ()

    @property
    def num_aggregated_rows(self) -> int:
        return int(self.fhat.size)

    def row_provenance(self, g: int) -> range:
        if not 0 <= g < self.num_aggregated_rows:
            raise BadRowIndex(f"aggregated row {g} out of range")
        return range(g * self.delta_r, (g + 1) * self.delta_r)

    def with_fine_rows(self, rows) -> "CoarseModel":
        return add_fine_rows(self, rows)

    def to_milp(self) -> MilpModel:
        """Aggregated rows, then extension rows, then selection rows."""
        semi = self.semi
        agg = sp.hstack([self.Ahat, self.Bhat, self.Chat, self.Dhat], format="csr")
        S, slb, sub, snames = semi.selection_rows()
        blocks = [agg]
        row_lb = [np.full(self.num_aggregated_rows, -np.inf)]
        row_ub = [self.fhat]
        names = [f"agg{g}" for g in range(self.num_aggregated_rows)]
        if self.extension:
            idx = list(self.extension)
            fine = semi.coupling_matrix()[idx]
            blocks.append(fine)
            row_lb.append(np.full(len(idx), -np.inf))
            row_ub.append(semi.base.f[idx])
            names += [f"couple{r}" for r in idx]
        blocks.append(S)
        row_lb.append(slb)
        row_ub.append(sub)
        names += snames
        lb, ub, integrality = semi.var_bounds()
        return MilpModel(
            obj=semi.objective_vector(),
            A=sp.vstack(blocks, format="csr"),
            row_lb=np.concatenate(row_lb),
            row_ub=np.concatenate(row_ub),
            lb=lb,
            ub=ub,
            integrality=integrality,
            obj_const=0.0,
            var_names=tuple(semi.var_names()),
            row_names=tuple(names),
        )


def build_coarse(semi: SemiCoarseModel, delta_r: Optional[int] = None) -> CoarseModel:
    """Aggregate the coupling rows in groups of delta_r (default: delta)."""
    M = semi.base.M
    delta_r = semi.part.delta if delta_r is None else int(delta_r)
    if delta_r < 1:
        raise IndivisibleRows(f"row-group size must be >= 1, got {delta_r}")
    if M % delta_r:
        raise IndivisibleRows(f"row-group size {delta_r} does not divide M={M}")
    groups = M // delta_r
    R = sp.csr_matrix(
        (np.ones(M), (np.arange(M) // delta_r, np.arange(M))), shape=(groups, M)
    )
    return CoarseModel(
        semi=semi,
        delta_r=delta_r,
        Ahat=(R @ semi.base.A).tocsr(),
        Bhat=(R @ semi.Bbar).tocsr(),
        Chat=(R @ semi.Cbar).tocsr(),
        Dhat=(R @ semi.Dbar).tocsr(),
        fhat=R @ semi.base.f,
    )


def add_fine_rows(coarse: CoarseModel, rows) -> CoarseModel:
    """Extend the coarse model with individual fine coupling rows.

    The extension set grows monotonically; duplicates are ignored.
    """
    M = coarse.semi.base.M
    incoming = []
    for r in rows:
        r = int(r)
        if not 0 <= r < M:
            raise BadRowIndex(f"fine row {r} out of range [0, {M})")
        incoming.append(r)
    merged = tuple(sorted(set(coarse.extension) | set(incoming)))
    if merged == coarse.extension:
        return coarse
    return replace(coarse, extension=merged)


# ---------------------------------------------------------------- sidecar

def provenance_sidecar(obj) -> dict:
    """Column/row provenance for a reduced model, as plain JSON data."""
    if isinstance(obj, CoarseModel):
        doc = provenance_sidecar(obj.semi)
        doc["kind"] = "coarse"
        doc["delta_r"] = obj.delta_r
        doc["aggregated_rows"] = [
            {"row": g, "fine_rows": [int(r) for r in obj.row_provenance(g)]}
            for g in range(obj.num_aggregated_rows)
        ]
        doc["extension_rows"] = [int(r) for r in obj.extension]
        return doc
    semi: SemiCoarseModel = obj
    return {
        "format": "twolevel-provenance",
        "version": 1,
        "kind": "semi_coarse",
        "m": semi.base.m,
        "n": semi.n,
        "delta": semi.part.delta,
        "x_columns": [
            {"group": g, "profile": k} for g, k in semi.x_provenance()
        ],
        "v_columns": [
            {"group": g, "profile": k, "ordinal": j}
            for g, k, j in semi.v_provenance()
        ],
        "w_columns": [
            {"group": g, "ordinal": j} for g, j in semi.w_provenance()
        ],
    }


def save_provenance(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(provenance_sidecar(obj), fh)
