"""Sparse minimization MILP model, feasibility checks and bound-fixing reductions.

Variables carry a kind code (``"B"`` binary, ``"I"`` general integer,
``"C"`` continuous) and constraints a sense code (``"L"`` for ``<=``,
``"G"`` for ``>=``, ``"E"`` for ``=``).  Instances are immutable: every
operation returns a new :class:`MilpInstance`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

BINARY, INTEGER, CONTINUOUS = "B", "I", "C"
LE, GE, EQ = "L", "G", "E"

SENSE_SYMBOLS = {LE: "<=", GE: ">=", EQ: "="}


class DimensionError(ValueError):
    """Vector length does not match the instance."""


class FixConflictError(ValueError):
    """A variable is already fixed to a different value."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """Minimize ``c @ x`` subject to sparse row constraints and variable bounds.

    The constraint matrix is stored as row-major triplets ``(rows, cols, vals)``;
    duplicates are summed and explicit zeros dropped at construction.
    """

    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    kinds: np.ndarray
    name: str = "milp"

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel()
        n = c.size
        rhs = np.asarray(self.rhs, dtype=np.float64).ravel()
        m = rhs.size
        senses = np.asarray(self.senses, dtype="<U1").ravel()
        kinds = np.asarray(list(self.kinds) if isinstance(self.kinds, str) else self.kinds,
                           dtype="<U1").ravel()
        lb = np.asarray(self.lb, dtype=np.float64).ravel()
        ub = np.asarray(self.ub, dtype=np.float64).ravel()
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()

        if not (rows.size == cols.size == vals.size):
            raise DimensionError("triplet arrays differ in length")
        if senses.size != m:
            raise DimensionError(f"{senses.size} senses for {m} constraints")
        for arr, label in ((lb, "lb"), (ub, "ub"), (kinds, "kinds")):
            if arr.size != n:
                raise DimensionError(f"{label} has length {arr.size}, expected {n}")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= n:
                raise ValueError("column index out of range")
        if not np.all(np.isin(senses, (LE, GE, EQ))):
            raise ValueError(f"unknown constraint sense in {np.unique(senses)}")
        if not np.all(np.isin(kinds, (BINARY, INTEGER, CONTINUOUS))):
            raise ValueError(f"unknown variable kind in {np.unique(kinds)}")
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)) or np.any(np.isnan(c)):
            raise ValueError("NaN in objective or bounds")
        if np.any(lb > ub):
            bad = int(np.flatnonzero(lb > ub)[0])
            raise ValueError(f"lower bound exceeds upper bound for x{bad}")
        binary = kinds == BINARY
        if np.any(lb[binary] < 0) or np.any(ub[binary] > 1):
            raise ValueError("binary variable bounds must lie within [0, 1]")

        # canonical row-major triplets
        if rows.size:
            coo = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()
            coo.sum_duplicates()
            coo.eliminate_zeros()
            coo.sort_indices()
            coo = coo.tocoo()
            rows, cols, vals = coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data

        for name, value in (("c", c), ("rows", rows), ("cols", cols), ("vals", vals),
                            ("senses", senses), ("rhs", rhs), ("lb", lb), ("ub", ub),
                            ("kinds", kinds)):
            object.__setattr__(self, name, _frozen(value))

    @classmethod
    def from_dense(cls, c, A=None, senses=None, rhs=None, lb=None, ub=None, kinds=None,
                   name="milp", maximize=False):
        """Build an instance from dense arrays; a pure-binary model by default."""
        c = np.asarray(c, dtype=np.float64)
        n = c.size
        if A is None:
            A = np.zeros((0, n))
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[1] != n:
            raise DimensionError(f"A has {A.shape[1]} columns, expected {n}")
        m = A.shape[0]
        senses = [LE] * m if senses is None else [_sense_code(s) for s in senses]
        rhs = np.zeros(m) if rhs is None else rhs
        kinds = np.full(n, BINARY) if kinds is None else np.asarray(list(kinds))
        if lb is None:
            lb = np.zeros(n)
        if ub is None:
            ub = np.where(kinds == BINARY, 1.0, np.inf)
        r, col = np.nonzero(A)
        return cls(c=-c if maximize else c, rows=r, cols=col, vals=A[r, col], senses=senses,
                   rhs=rhs, lb=lb, ub=ub, kinds=kinds, name=name)

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_cons(self) -> int:
        return self.rhs.size

    @property
    def nnz(self) -> int:
        return self.vals.size

    @property
    def num_integer(self) -> int:
        """Count of integer-kind (binary or general integer) variables."""
        return int(np.count_nonzero(self.kinds != CONTINUOUS))

    @cached_property
    def A(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)),
                             shape=(self.num_cons, self.num_vars))

    @cached_property
    def binary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == BINARY)

    @property
    def fixed_mask(self) -> np.ndarray:
        return self.lb == self.ub

    @property
    def is_pure_binary(self) -> bool:
        return bool(np.all(self.kinds == BINARY))

    def replace(self, **changes) -> "MilpInstance":
        return dataclasses.replace(self, **changes)

    def stats(self) -> dict:
        return {"name": self.name, "num_vars": self.num_vars, "num_cons": self.num_cons,
                "nnz": self.nnz, "num_binary": int(self.binary_indices.size),
                "num_fixed": int(np.count_nonzero(self.fixed_mask))}

    def __repr__(self):
        return (f"MilpInstance(name={self.name!r}, vars={self.num_vars}, "
                f"cons={self.num_cons}, nnz={self.nnz})")


def _sense_code(s: str) -> str:
    lookup = {"<=": LE, "=<": LE, "<": LE, LE: LE, ">=": GE, "=>": GE, ">": GE, GE: GE,
              "=": EQ, "==": EQ, EQ: EQ}
    try:
        return lookup[s]
    except KeyError:
        raise ValueError(f"unknown constraint sense {s!r}") from None


@dataclass(frozen=True, eq=False)
class PartialAssignment:
    """Values for an ordered set of distinct (binary) variable indices."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.float64).ravel()
        if idx.size != val.size:
            raise DimensionError("indices and values differ in length")
        if np.unique(idx).size != idx.size:
            raise ValueError("partial assignment indices must be distinct")
        object.__setattr__(self, "indices", _frozen(idx))
        object.__setattr__(self, "values", _frozen(val))

    @classmethod
    def from_dict(cls, mapping: dict) -> "PartialAssignment":
        items = list(mapping.items())
        return cls([i for i, _ in items], [v for _, v in items])

    def as_dict(self) -> dict:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, PartialAssignment):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"PartialAssignment({self.as_dict()})"

    def union(self, other: "PartialAssignment") -> "PartialAssignment":
        merged = self.as_dict()
        for i, v in other.as_dict().items():
            if i in merged and merged[i] != v:
                raise FixConflictError(f"x{i} assigned both {merged[i]} and {v}")
            merged[i] = v
        return PartialAssignment.from_dict(merged)


def _check_length(inst: MilpInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != inst.num_vars:
        raise DimensionError(f"assignment of shape {x.shape} for {inst.num_vars} variables")
    return x


def evaluate_objective(inst: MilpInstance, x) -> float:
    x = _check_length(inst, x)
    return float(np.dot(inst.c, x))


@dataclass(frozen=True)
class FeasibilityReport:
    row_violation: np.ndarray
    bound_violation: np.ndarray
    integrality_violation: np.ndarray
    tol: float

    @property
    def max_violation(self) -> float:
        parts = [a.max() for a in (self.row_violation, self.bound_violation,
                                   self.integrality_violation) if a.size]
        return float(max(parts)) if parts else 0.0

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol

    def __bool__(self):
        return self.feasible


def row_activity(inst: MilpInstance, x) -> np.ndarray:
    return inst.A @ _check_length(inst, x)


def check_feasibility(inst: MilpInstance, x, tol: float = 1e-6,
                      integral: bool = True) -> FeasibilityReport:
    """Per-row, per-bound and integrality violation magnitudes of ``x``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = _check_length(inst, x)
    act = inst.A @ x
    viol = np.zeros(inst.num_cons)
    le, ge, eq = inst.senses == LE, inst.senses == GE, inst.senses == EQ
    viol[le] = np.maximum(act[le] - inst.rhs[le], 0.0)
    viol[ge] = np.maximum(inst.rhs[ge] - act[ge], 0.0)
    viol[eq] = np.abs(act[eq] - inst.rhs[eq])
    with np.errstate(invalid="ignore"):
        bound = np.maximum(np.maximum(inst.lb - x, x - inst.ub), 0.0)
    bound = np.nan_to_num(bound, nan=np.inf)
    if integral:
        integ = np.where(inst.kinds != CONTINUOUS, np.abs(x - np.round(x)), 0.0)
    else:
        integ = np.zeros(inst.num_vars)
    return FeasibilityReport(viol, bound, integ, tol)


def fix_variables(inst: MilpInstance, pa: PartialAssignment) -> MilpInstance:
    """Fix binaries by tightening their bounds to ``l = u = value``."""
    if len(pa) == 0:
        return inst
    idx, val = pa.indices, pa.values
    if idx.min() < 0 or idx.max() >= inst.num_vars:
        raise DimensionError("partial assignment index out of range")
    if np.any(inst.kinds[idx] != BINARY):
        raise ValueError("only binary variables can be fixed")
    if np.any((val != 0.0) & (val != 1.0)):
        raise ValueError("binary fixings must be 0 or 1")
    clash = (val < inst.lb[idx]) | (val > inst.ub[idx])
    if np.any(clash):
        j = int(idx[np.flatnonzero(clash)[0]])
        raise FixConflictError(f"x{j} already restricted to [{inst.lb[j]}, {inst.ub[j]}]")
    lb, ub = inst.lb.copy(), inst.ub.copy()
    lb[idx] = val
    ub[idx] = val
    return inst.replace(lb=lb, ub=ub)


def add_constraint(inst: MilpInstance, coefs: dict, sense: str, rhs: float) -> MilpInstance:
    """Append one row ``sum coefs[j] * x_j (sense) rhs``."""
    cols = np.fromiter(coefs.keys(), dtype=np.int64, count=len(coefs))
    vals = np.fromiter(coefs.values(), dtype=np.float64, count=len(coefs))
    r = inst.num_cons
    return inst.replace(rows=np.concatenate([inst.rows, np.full(cols.size, r)]),
                        cols=np.concatenate([inst.cols, cols]),
                        vals=np.concatenate([inst.vals, vals]),
                        senses=np.append(inst.senses, _sense_code(sense)),
                        rhs=np.append(inst.rhs, rhs))


def default_cut_epsilon(bound: float) -> float:
    return 1e-6 * max(1.0, abs(bound))


def add_objective_cut(inst: MilpInstance, bound: float,
                      epsilon: Optional[float] = None) -> MilpInstance:
    """Append ``c @ x <= bound - epsilon``; a strict improvement cut in LP-expressible form."""
    if epsilon is None:
        epsilon = default_cut_epsilon(bound)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nz = np.flatnonzero(inst.c)
    return add_constraint(inst, dict(zip(nz.tolist(), inst.c[nz].tolist())), LE,
                          bound - epsilon)


def eliminate_fixed(inst: MilpInstance):
    """Substitute fixed variables and drop their columns.

    Returns ``(reduced, kept, offset)`` where ``kept`` maps reduced columns to
    original indices and ``offset`` is the constant objective contribution.
    Used only for reporting reduced dimensions.
    """
    fixed = inst.fixed_mask
    kept = np.flatnonzero(~fixed)
    xf = np.where(fixed, inst.lb, 0.0)
    offset = float(inst.c @ xf)
    rhs = inst.rhs - inst.A @ xf
    sub = inst.A[:, kept].tocoo()
    reduced = MilpInstance(c=inst.c[kept], rows=sub.row, cols=sub.col, vals=sub.data,
                           senses=inst.senses, rhs=rhs, lb=inst.lb[kept], ub=inst.ub[kept],
                           kinds=inst.kinds[kept], name=inst.name + "_elim")
    return reduced, kept, offset


def restrict(inst: MilpInstance, indices: Sequence[int], x) -> PartialAssignment:
    """Partial assignment holding ``x`` rounded on ``indices``."""
    x = _check_length(inst, x)
    idx = np.asarray(indices, dtype=np.int64)
    return PartialAssignment(idx, np.round(x[idx]))
