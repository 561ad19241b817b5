"""Weighted bipartite graph featurization of a MILP instance.

Variable features (18 columns, in order):

====  ==========================================================
0     objective coefficient / max(1, max_j |c_j|)
1     mean constraint coefficient of the variable (0 if isolated)
2     degree / max variable degree (0 if every degree is 0)
3     max constraint coefficient (0 if isolated)
4     min constraint coefficient (0 if isolated)
5     1 for integer-kind (binary or integer) variables, else 0
6-17  12-bit binary code of ``index mod 4096``, most significant bit first
====  ==========================================================

Constraint features (4 columns): mean coefficient, degree / max degree,
rhs / max(1, ||row||_2), sense code (``<=`` 0, ``>=`` 0.5, ``=`` 1).
Each edge carries its raw coefficient.  An optional 19th variable column
flags fixed variables (``lb == ub``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .milp import CONTINUOUS, EQ, GE, MilpInstance

N_VAR_FEATURES = 18
N_CON_FEATURES = 4
POSITION_BITS = 12


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    var_features: np.ndarray  # (n, 18) or (n, 19)
    con_features: np.ndarray  # (m, 4)
    edge_con: np.ndarray  # (E,)
    edge_var: np.ndarray  # (E,)
    edge_features: np.ndarray  # (E, 1)
    binary_mask: np.ndarray  # (n,) bool

    @property
    def num_vars(self):
        return self.var_features.shape[0]

    @property
    def num_cons(self):
        return self.con_features.shape[0]

    @property
    def num_edges(self):
        return self.edge_con.size


def position_embedding(indices: np.ndarray, bits: int = POSITION_BITS) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64) % (1 << bits)
    shifts = np.arange(bits - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.float64)


def _grouped(index, values, size):
    count = np.bincount(index, minlength=size).astype(np.float64)
    total = np.bincount(index, weights=values, minlength=size)
    mean = np.divide(total, count, out=np.zeros(size), where=count > 0)
    vmax = np.full(size, -np.inf)
    vmin = np.full(size, np.inf)
    np.maximum.at(vmax, index, values)
    np.minimum.at(vmin, index, values)
    vmax[count == 0] = 0.0
    vmin[count == 0] = 0.0
    return count, mean, vmax, vmin


def featurize(inst: MilpInstance, fixed_flag: bool = False) -> BipartiteGraph:
    n, m = inst.num_vars, inst.num_cons
    rows, cols, vals = inst.rows, inst.cols, inst.vals

    vdeg, vmean, vmax, vmin = _grouped(cols, vals, n)
    cdeg, cmean, _, _ = _grouped(rows, vals, m)
    vdeg_scaled = vdeg / vdeg.max() if n and vdeg.max() > 0 else np.zeros(n)
    cdeg_scaled = cdeg / cdeg.max() if m and cdeg.max() > 0 else np.zeros(m)

    cscale = max(1.0, float(np.abs(inst.c).max())) if n else 1.0
    var = np.empty((n, N_VAR_FEATURES + int(fixed_flag)))
    var[:, 0] = inst.c / cscale
    var[:, 1] = vmean
    var[:, 2] = vdeg_scaled
    var[:, 3] = vmax
    var[:, 4] = vmin
    var[:, 5] = (inst.kinds != CONTINUOUS).astype(np.float64)
    var[:, 6:N_VAR_FEATURES] = position_embedding(np.arange(n))
    if fixed_flag:
        var[:, N_VAR_FEATURES] = inst.fixed_mask.astype(np.float64)

    row_norm = np.sqrt(np.bincount(rows, weights=vals ** 2, minlength=m))
    sense = np.zeros(m)
    sense[inst.senses == GE] = 1.0
    sense[inst.senses == EQ] = 2.0
    con = np.column_stack([cmean, cdeg_scaled, inst.rhs / np.maximum(1.0, row_norm),
                           sense / 2.0]) if m else np.zeros((0, N_CON_FEATURES))

    return BipartiteGraph(var_features=var, con_features=con, edge_con=rows.copy(),
                          edge_var=cols.copy(), edge_features=vals.reshape(-1, 1).copy(),
                          binary_mask=inst.kinds == "B")


_MAGIC = b"APBG"
_HEADER = struct.Struct("<4sIQQQQQ")


def save_graph(graph: BipartiteGraph, path) -> None:
    """Write ``graph`` as a flat little-endian float64 container.

    Layout: header ``(magic b"APBG", version u32, n u64, m u64, var_cols u64,
    con_cols u64, edges u64)`` then the variable matrix, constraint matrix,
    binary mask and ``(con, var, coef)`` edge triplets, all row-major float64.
    """
    var, con = graph.var_features, graph.con_features
    header = _HEADER.pack(_MAGIC, 1, var.shape[0], con.shape[0], var.shape[1],
                          N_CON_FEATURES, graph.num_edges)
    edges = np.column_stack([graph.edge_con, graph.edge_var, graph.edge_features[:, 0]])
    with open(path, "wb") as fh:
        fh.write(header)
        for block in (var, con, graph.binary_mask.astype(np.float64), edges):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_graph(path) -> BipartiteGraph:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, m, vc, cc, e = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a graph feature file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    sizes = [n * vc, m * cc, n, e * 3]
    if data.size != sum(sizes):
        raise ValueError("truncated graph feature file")
    parts = np.split(data, np.cumsum(sizes)[:-1])
    edges = parts[3].reshape(e, 3)
    return BipartiteGraph(var_features=parts[0].reshape(n, vc).copy(),
                          con_features=parts[1].reshape(m, cc).copy(),
                          edge_con=edges[:, 0].astype(np.int64),
                          edge_var=edges[:, 1].astype(np.int64),
                          edge_features=edges[:, 2:3].copy(),
                          binary_mask=parts[2] > 0.5)
