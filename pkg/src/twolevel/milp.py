"""Solver-facing MILP container with ranged rows, plus interchange formats.

The container stores

    minimize    obj @ z + obj_const
    subject to  row_lb <= A @ z <= row_ub
                lb <= z <= ub,    z_j integer where integrality_j == 1

Ranged rows cover "<=", ">=" and "=" uniformly: a "<=" row is
(-inf, ub], a ">=" row is [lb, +inf) and an equality row is [r, r].
Interchange is free-format MPS (RANGES and integer markers supported)
and a self-describing JSON with sparse triplets.  JSON round-trips every
field exactly; MPS is exact except the lower bound of a ranged row,
which RANGES encodes as ub - lb and therefore reconstructs only to
within one ulp of that difference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NonFiniteCoefficient, BoundOrderViolation

INF = float("inf")


def _as_float_array(x, name, length=None):
    arr = np.asarray(x, dtype=float).ravel()
    if length is not None and arr.size != length:
        raise DimensionMismatch(f"{name}: expected length {length}, got {arr.size}")
    return arr


def _encode_bound(arr):
    out = []
    for x in arr:
        if x == INF:
            out.append("inf")
        elif x == -INF:
            out.append("-inf")
        else:
            out.append(float(x))
    return out


def _decode_bound(values):
    out = np.empty(len(values), dtype=float)
    for i, v in enumerate(values):
        if v == "inf":
            out[i] = INF
        elif v == "-inf":
            out[i] = -INF
        else:
            out[i] = float(v)
    return out


@dataclass(frozen=True)
class MilpModel:
    """Immutable MILP in ranged-row form."""

    obj: np.ndarray
    A: sp.csr_matrix
    row_lb: np.ndarray
    row_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray  # 0 continuous, 1 integer
    obj_const: float = 0.0
    var_names: tuple = field(default=(), compare=False)
    row_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        n = self.obj.size
        m = self.row_lb.size
        if self.A.shape != (m, n):
            raise DimensionMismatch(f"A is {self.A.shape}, expected ({m}, {n})")
        for name in ("row_ub", "lb", "ub", "integrality"):
            arr = getattr(self, name)
            want = m if name == "row_ub" else n
            if arr.size != want:
                raise DimensionMismatch(f"{name}: expected length {want}, got {arr.size}")
        if not np.all(np.isfinite(self.obj)):
            raise NonFiniteCoefficient("objective has non-finite entries")
        if self.A.nnz and not np.all(np.isfinite(self.A.data)):
            raise NonFiniteCoefficient("constraint matrix has non-finite entries")
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise BoundOrderViolation(f"lb > ub at variable {bad}")
        if np.any(self.row_lb > self.row_ub):
            bad = int(np.argmax(self.row_lb > self.row_ub))
            raise BoundOrderViolation(f"row_lb > row_ub at row {bad}")

    # ------------------------------------------------------------------ basics

    @property
    def num_vars(self) -> int:
        return int(self.obj.size)

    @property
    def num_rows(self) -> int:
        return int(self.row_lb.size)

    @staticmethod
    def build(obj, A, row_lb, row_ub, lb, ub, integrality, obj_const=0.0,
              var_names=(), row_names=()) -> "MilpModel":
        A = sp.csr_matrix(A, dtype=float)
        obj = _as_float_array(obj, "obj")
        n = obj.size
        m = A.shape[0]
        return MilpModel(
            obj=obj,
            A=A,
            row_lb=_as_float_array(row_lb, "row_lb", m),
            row_ub=_as_float_array(row_ub, "row_ub", m),
            lb=_as_float_array(lb, "lb", n),
            ub=_as_float_array(ub, "ub", n),
            integrality=np.asarray(integrality, dtype=np.int8).ravel(),
            obj_const=float(obj_const),
            var_names=tuple(var_names),
            row_names=tuple(row_names),
        )

    def relax(self) -> "MilpModel":
        """LP relaxation: drop all integrality."""
        return replace(self, integrality=np.zeros(self.num_vars, dtype=np.int8))

    def objective_value(self, z) -> float:
        z = _as_float_array(z, "z", self.num_vars)
        return float(self.obj @ z + self.obj_const)

    def row_values(self, z) -> np.ndarray:
        z = _as_float_array(z, "z", self.num_vars)
        return np.asarray(self.A @ z).ravel()

    def row_residuals(self, z) -> np.ndarray:
        """Per-row infeasibility amount (0 when the row is satisfied)."""
        vals = self.row_values(z)
        over = np.maximum(vals - self.row_ub, 0.0)
        under = np.maximum(self.row_lb - vals, 0.0)
        return np.where(np.isfinite(self.row_ub), over, 0.0) + np.where(
            np.isfinite(self.row_lb), under, 0.0
        )

    def bound_residuals(self, z) -> np.ndarray:
        z = _as_float_array(z, "z", self.num_vars)
        over = np.maximum(z - self.ub, 0.0)
        under = np.maximum(self.lb - z, 0.0)
        return np.where(np.isfinite(self.ub), over, 0.0) + np.where(
            np.isfinite(self.lb), under, 0.0
        )

    def with_rows(self, extra_A, extra_lb, extra_ub, extra_names=()) -> "MilpModel":
        """Append rows; variables are unchanged."""
        extra_A = sp.csr_matrix(extra_A, dtype=float)
        if extra_A.shape[1] != self.num_vars:
            raise DimensionMismatch(
                f"extra rows have {extra_A.shape[1]} columns, expected {self.num_vars}"
            )
        names = self.row_names
        if names or extra_names:
            base = names if names else tuple(f"r{i}" for i in range(self.num_rows))
            add = tuple(extra_names) if extra_names else tuple(
                f"r{self.num_rows + i}" for i in range(extra_A.shape[0])
            )
            names = base + add
        return MilpModel(
            obj=self.obj,
            A=sp.vstack([self.A, extra_A], format="csr"),
            row_lb=np.concatenate(
                [self.row_lb, _as_float_array(extra_lb, "extra_lb", extra_A.shape[0])]
            ),
            row_ub=np.concatenate(
                [self.row_ub, _as_float_array(extra_ub, "extra_ub", extra_A.shape[0])]
            ),
            lb=self.lb,
            ub=self.ub,
            integrality=self.integrality,
            obj_const=self.obj_const,
            var_names=self.var_names,
            row_names=names,
        )

    # ------------------------------------------------------------------ JSON

    def to_json_dict(self) -> dict:
        coo = self.A.tocoo()
        return {
            "format": "twolevel-milp",
            "version": 1,
            "num_vars": self.num_vars,
            "num_rows": self.num_rows,
            "obj": self.obj.tolist(),
            "obj_const": self.obj_const,
            "A": {
                "row": coo.row.tolist(),
                "col": coo.col.tolist(),
                "data": coo.data.tolist(),
            },
            "row_lb": _encode_bound(self.row_lb),
            "row_ub": _encode_bound(self.row_ub),
            "lb": _encode_bound(self.lb),
            "ub": _encode_bound(self.ub),
            "integrality": self.integrality.tolist(),
            "var_names": list(self.var_names),
            "row_names": list(self.row_names),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @staticmethod
    def from_json_dict(doc: dict) -> "MilpModel":
        if doc.get("format") != "twolevel-milp":
            raise ValueError("not a twolevel-milp JSON document")
        n = doc["num_vars"]
        m = doc["num_rows"]
        A = sp.coo_matrix(
            (doc["A"]["data"], (doc["A"]["row"], doc["A"]["col"])), shape=(m, n)
        ).tocsr()
        return MilpModel.build(
            obj=doc["obj"],
            A=A,
            row_lb=_decode_bound(doc["row_lb"]),
            row_ub=_decode_bound(doc["row_ub"]),
            lb=_decode_bound(doc["lb"]),
            ub=_decode_bound(doc["ub"]),
            integrality=doc["integrality"],
            obj_const=doc.get("obj_const", 0.0),
            var_names=doc.get("var_names", ()),
            row_names=doc.get("row_names", ()),
        )

    @staticmethod
    def from_json(path) -> "MilpModel":
        with open(path) as fh:
            return MilpModel.from_json_dict(json.load(fh))

    # ------------------------------------------------------------------ MPS

    def to_mps(self, path, name="TWOLEVEL") -> None:
        write_mps(self, path, name=name)

    @staticmethod
    def from_mps(path) -> "MilpModel":
        return read_mps(path)


# ---------------------------------------------------------------------- MPS IO

def _num(x) -> str:
    """repr of a Python float: round-trips exactly, no numpy scalar prefix."""
    return repr(float(x))


def _mps_row_kind(lb, ub):
    if lb == ub:
        return "E"
    if np.isfinite(ub):
        return "L"
    if np.isfinite(lb):
        return "G"
    return "N"  # free row; never emitted for constraints here


def write_mps(model: MilpModel, path, name="TWOLEVEL") -> None:
    """Free-format MPS with RANGES and INTORG/INTEND markers."""
    vnames = list(model.var_names) or [f"X{j}" for j in range(model.num_vars)]
    rnames = list(model.row_names) or [f"R{i}" for i in range(model.num_rows)]
    # fields are whitespace-delimited in free format; spaces in names break it
    vnames = [v.replace(" ", "_") for v in vnames]
    rnames = [r.replace(" ", "_") for r in rnames]

    lines = [f"NAME {name}", "ROWS", " N COST"]
    for i in range(model.num_rows):
        kind = _mps_row_kind(model.row_lb[i], model.row_ub[i])
        lines.append(f" {kind} {rnames[i]}")

    csc = model.A.tocsc()
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(model.num_vars):
        want_int = bool(model.integrality[j])
        if want_int and not in_int:
            lines.append(f" MARKER{marker} 'MARKER' 'INTORG'")
            marker += 1
            in_int = True
        elif not want_int and in_int:
            lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")
            marker += 1
            in_int = False
        start, end = csc.indptr[j], csc.indptr[j + 1]
        if model.obj[j] != 0.0 or start == end:
            # a column must appear at least once to exist
            lines.append(f" {vnames[j]} COST {_num(model.obj[j])}")
        for p in range(start, end):
            lines.append(f" {vnames[j]} {rnames[csc.indices[p]]} {_num(csc.data[p])}")
    if in_int:
        lines.append(f" MARKER{marker} 'MARKER' 'INTEND'")

    lines.append("RHS")
    if model.obj_const != 0.0:
        # convention: RHS on the objective row is the negated constant
        lines.append(f" RHS COST {_num(-model.obj_const)}")
    for i in range(model.num_rows):
        kind = _mps_row_kind(model.row_lb[i], model.row_ub[i])
        rhs = {"E": model.row_lb[i], "L": model.row_ub[i], "G": model.row_lb[i]}.get(kind)
        if rhs is not None and rhs != 0.0:
            lines.append(f" RHS {rnames[i]} {_num(rhs)}")

    ranges = []
    for i in range(model.num_rows):
        lbi, ubi = model.row_lb[i], model.row_ub[i]
        if np.isfinite(lbi) and np.isfinite(ubi) and lbi != ubi:
            # row written as L with rhs=ub; range recovers lb = ub - |r|
            ranges.append(f" RNG {rnames[i]} {_num(ubi - lbi)}")
    if ranges:
        lines.append("RANGES")
        lines.extend(ranges)

    lines.append("BOUNDS")
    for j in range(model.num_vars):
        lbj, ubj = model.lb[j], model.ub[j]
        integer = bool(model.integrality[j])
        if integer and lbj == 0.0 and ubj == 1.0:
            lines.append(f" BV BND {vnames[j]}")
            continue
        if lbj == -INF and ubj == INF:
            lines.append(f" FR BND {vnames[j]}")
            continue
        if lbj == -INF:
            lines.append(f" MI BND {vnames[j]}")
        elif lbj != 0.0 or integer:
            kind = "LI" if integer else "LO"
            lines.append(f" {kind} BND {vnames[j]} {_num(lbj)}")
        if ubj != INF:
            kind = "UI" if integer else "UP"
            lines.append(f" {kind} BND {vnames[j]} {_num(ubj)}")

    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path) -> MilpModel:
    """Reader for the subset of free-format MPS written by write_mps."""
    section = None
    row_kind = {}
    row_order = []
    obj_row = None
    cols = {}
    col_order = []
    integer_cols = set()
    obj = {}
    rhs = {}
    rng = {}
    bounds = {}
    obj_const = 0.0
    in_int = False

    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("*"):
                continue
            if not line[0].isspace():
                word = line.split()[0].upper()
                if word in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA"):
                    section = word
                elif word == "NAME":
                    section = None
                continue
            parts = line.split()
            if section == "ROWS":
                kind, rname = parts[0].upper(), parts[1]
                if kind == "N" and obj_row is None:
                    # first N row is the objective; later N rows are free rows
                    obj_row = rname
                else:
                    row_kind[rname] = kind
                    row_order.append(rname)
            elif section == "COLUMNS":
                if len(parts) >= 3 and parts[1] == "'MARKER'":
                    in_int = parts[2] == "'INTORG'"
                    continue
                cname = parts[0]
                if cname not in cols:
                    cols[cname] = {}
                    col_order.append(cname)
                    if in_int:
                        integer_cols.add(cname)
                for rname, val in zip(parts[1::2], parts[2::2]):
                    if rname == obj_row:
                        obj[cname] = obj.get(cname, 0.0) + float(val)
                    else:
                        cols[cname][rname] = cols[cname].get(rname, 0.0) + float(val)
            elif section == "RHS":
                for rname, val in zip(parts[1::2], parts[2::2]):
                    if rname == obj_row:
                        obj_const = -float(val)
                    else:
                        rhs[rname] = float(val)
            elif section == "RANGES":
                for rname, val in zip(parts[1::2], parts[2::2]):
                    rng[rname] = float(val)
            elif section == "BOUNDS":
                kind = parts[0].upper()
                cname = parts[2]
                entry = bounds.setdefault(cname, {})
                if kind in ("LO", "LI"):
                    entry["lb"] = float(parts[3])
                elif kind in ("UP", "UI"):
                    entry["ub"] = float(parts[3])
                elif kind == "FX":
                    entry["lb"] = entry["ub"] = float(parts[3])
                elif kind == "FR":
                    entry["lb"], entry["ub"] = -INF, INF
                elif kind == "MI":
                    entry["lb"] = -INF
                elif kind == "PL":
                    entry["ub"] = INF
                elif kind == "BV":
                    entry["lb"], entry["ub"] = 0.0, 1.0
                    integer_cols.add(cname)

    n = len(col_order)
    m = len(row_order)
    row_index = {r: i for i, r in enumerate(row_order)}
    col_index = {c: j for j, c in enumerate(col_order)}
    data, ri, ci = [], [], []
    for cname, entries in cols.items():
        j = col_index[cname]
        for rname, val in entries.items():
            ri.append(row_index[rname])
            ci.append(j)
            data.append(val)
    A = sp.coo_matrix((data, (ri, ci)), shape=(m, n)).tocsr()

    row_lb = np.empty(m)
    row_ub = np.empty(m)
    for rname, i in row_index.items():
        kind = row_kind[rname]
        b = rhs.get(rname, 0.0)
        if kind == "E":
            row_lb[i] = row_ub[i] = b
        elif kind == "L":
            row_ub[i] = b
            row_lb[i] = b - abs(rng[rname]) if rname in rng else -INF
        elif kind == "G":
            row_lb[i] = b
            row_ub[i] = b + abs(rng[rname]) if rname in rng else INF
        else:
            row_lb[i], row_ub[i] = -INF, INF

    lb = np.zeros(n)
    ub = np.full(n, INF)
    integrality = np.zeros(n, dtype=np.int8)
    for cname, j in col_index.items():
        if cname in integer_cols:
            integrality[j] = 1
        entry = bounds.get(cname, {})
        if "lb" in entry:
            lb[j] = entry["lb"]
        if "ub" in entry:
            ub[j] = entry["ub"]

    objv = np.zeros(n)
    for cname, val in obj.items():
        objv[col_index[cname]] = val

    return MilpModel.build(
        obj=objv, A=A, row_lb=row_lb, row_ub=row_ub, lb=lb, ub=ub,
        integrality=integrality, obj_const=obj_const,
        var_names=col_order, row_names=row_order,
    )
