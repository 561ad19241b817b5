"""Solver backends: exhaustive enumeration and an LP-file subprocess adapter.

The adapter writes the model with :func:`~apollo_milp.lpformat.write_lp`,
runs a command template and reads the solution file back in one of the
dialects documented in :mod:`apollo_milp.solfile`.
"""

from __future__ import annotations

import enum
import logging
import os
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lpformat import write_lp
from .milp import BINARY, CONTINUOUS, EQ, GE, LE, MilpInstance, check_feasibility, \
    evaluate_objective
from .predictor import SolutionPool
from .solfile import SolutionParseError, format_solution, parse_solution  # noqa: F401

log = logging.getLogger(__name__)

SCRATCH_ENV = "APOLLO_SCRATCH"
HIGHS_COMMAND = (f"{shlex.quote(sys.executable)} -m apollo_milp.highs_runner {{lp}} "
                 f"--timelimit {{timelimit}} --sol {{sol}}")


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    TIMEOUT_NO_INCUMBENT = "timeout-no-incumbent"

    def __str__(self):
        return self.value


class EnumerationLimitError(ValueError):
    """Instance too large or not pure binary for exhaustive enumeration."""


class IntegrityError(RuntimeError):
    """A backend returned an incumbent that fails the feasibility check."""


@dataclass
class SolveResult:
    status: SolveStatus
    incumbent: Optional[np.ndarray] = None
    objective: Optional[float] = None
    solve_seconds: float = 0.0
    pool: Optional[SolutionPool] = None

    @property
    def has_incumbent(self) -> bool:
        return self.incumbent is not None


@dataclass
class BackendConfig:
    """``kind`` is ``"enumerate"`` or ``"external"``.

    ``command`` is a template with ``{lp}``, ``{sol}`` and ``{timelimit}``
    placeholders; ``grace`` is the fraction of the time limit added before
    the child process is killed.
    """

    kind: str = "enumerate"
    command: str = HIGHS_COMMAND
    time_limit: float = 60.0
    dialect: str = "plain"
    max_enum_vars: int = 24
    pool_size: int = 0
    scratch_dir: Optional[str] = None
    grace: float = 0.1
    n_jobs: int = 1
    keep_files: bool = False

    def __post_init__(self):
        if self.kind not in ("enumerate", "external"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.dialect not in ("plain", "xml-lite"):
            raise ValueError(f"unknown solution dialect {self.dialect!r}")

    @classmethod
    def from_spec(cls, spec: str, **kw) -> "BackendConfig":
        """``"enumerate"``, ``"highs"`` or a command template."""
        if spec == "enumerate":
            return cls(kind="enumerate", **kw)
        if spec == "highs":
            return cls(kind="external", command=HIGHS_COMMAND, **kw)
        return cls(kind="external", command=spec, **kw)


def solve(inst: MilpInstance, cfg: BackendConfig, time_limit: Optional[float] = None,
          pool_size: Optional[int] = None) -> SolveResult:
    if cfg.kind == "enumerate":
        return solve_enumerate(inst, cfg, pool_size=pool_size)
    return solve_external(inst, cfg, time_limit=time_limit)


# -- enumeration -------------------------------------------------------------

_CHUNK = 1 << 15


def _bits(start, stop, k):
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k)) & 1).astype(np.float64)


def _scan(inst, free, base, start, stop, pool_size, tol):
    """Best feasible assignments among enumeration indices ``[start, stop)``."""
    A = inst.A
    Af = A[:, free].toarray()
    base_act = A @ base
    cf = inst.c[free]
    base_obj = float(inst.c @ base)
    le, ge, eq = inst.senses == LE, inst.senses == GE, inst.senses == EQ
    keep = max(pool_size, 1)
    found_obj, found_idx = [], []
    for s in range(start, stop, _CHUNK):
        e = min(stop, s + _CHUNK)
        B = _bits(s, e, free.size)
        act = B @ Af.T + base_act
        ok = np.ones(e - s, dtype=bool)
        if le.any():
            ok &= np.all(act[:, le] <= inst.rhs[le] + tol, axis=1)
        if ge.any():
            ok &= np.all(act[:, ge] >= inst.rhs[ge] - tol, axis=1)
        if eq.any():
            ok &= np.all(np.abs(act[:, eq] - inst.rhs[eq]) <= tol, axis=1)
        if not ok.any():
            continue
        obj = B[ok] @ cf + base_obj
        ids = np.flatnonzero(ok) + s
        found_obj.append(obj)
        found_idx.append(ids)
        # prune to the best ``keep`` so far
        allo, alli = np.concatenate(found_obj), np.concatenate(found_idx)
        if allo.size > 4 * keep:
            order = np.lexsort((alli, allo))[:keep]
            found_obj, found_idx = [allo[order]], [alli[order]]
    if not found_obj:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    allo, alli = np.concatenate(found_obj), np.concatenate(found_idx)
    order = np.lexsort((alli, allo))[:keep]
    return allo[order], alli[order]


def solve_enumerate(inst: MilpInstance, cfg: Optional[BackendConfig] = None,
                    pool_size: Optional[int] = None, tol: float = 1e-9) -> SolveResult:
    """Exact optimum of a pure-binary instance by exhaustive enumeration.

    Fixed variables (``lb == ub``) are substituted; the remaining ``k``
    variables are enumerated over ``2**k`` index ranges, optionally split
    across threads.  Ties are broken by enumeration index, so results are
    deterministic.  With ``pool_size`` the best distinct assignments are
    returned as a :class:`SolutionPool`.
    """
    cfg = cfg or BackendConfig()
    pool_size = cfg.pool_size if pool_size is None else pool_size
    t0 = time.perf_counter()
    if not np.all(inst.kinds == BINARY):
        raise EnumerationLimitError("enumeration requires a pure-binary instance")
    fixed = inst.lb == inst.ub
    free = np.flatnonzero(~fixed)
    if free.size > cfg.max_enum_vars:
        raise EnumerationLimitError(
            f"{free.size} free variables exceed the enumeration limit {cfg.max_enum_vars}")
    base = np.where(fixed, inst.lb, 0.0)
    total = 1 << free.size
    n_jobs = max(1, min(cfg.n_jobs, total // _CHUNK or 1))
    bounds = np.linspace(0, total, n_jobs + 1).astype(np.int64)
    if n_jobs == 1:
        parts = [_scan(inst, free, base, 0, total, pool_size, tol)]
    else:
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(lambda r: _scan(inst, free, base, r[0], r[1], pool_size, tol),
                                zip(bounds[:-1], bounds[1:])))
    objs = np.concatenate([p[0] for p in parts])
    ids = np.concatenate([p[1] for p in parts])
    elapsed = time.perf_counter() - t0
    if objs.size == 0:
        return SolveResult(SolveStatus.INFEASIBLE, solve_seconds=elapsed,
                           pool=SolutionPool(max(pool_size, 1)) if pool_size else None)
    order = np.lexsort((ids, objs))
    objs, ids = objs[order], ids[order]

    def assignment(k):
        x = base.copy()
        x[free] = ((k >> np.arange(free.size)) & 1).astype(np.float64)
        return x

    best = assignment(int(ids[0]))
    pool = None
    if pool_size:
        pool = SolutionPool(pool_size)
        for o, k in zip(objs[:pool_size], ids[:pool_size]):
            pool.add(assignment(int(k)), evaluate_objective(inst, assignment(int(k))))
    return SolveResult(SolveStatus.OPTIMAL, best, evaluate_objective(inst, best), elapsed, pool)


# -- external subprocess -----------------------------------------------------

def _snap_integers(inst, x, tol=1e-6):
    x = x.copy()
    integral = inst.kinds != CONTINUOUS
    r = np.round(x)
    close = integral & (np.abs(x - r) <= tol)
    x[close] = r[close]
    return x


def scratch_root(cfg: BackendConfig) -> Optional[str]:
    root = cfg.scratch_dir or os.environ.get(SCRATCH_ENV)
    if root:
        os.makedirs(root, exist_ok=True)
    return root


def solve_external(inst: MilpInstance, cfg: BackendConfig,
                   time_limit: Optional[float] = None) -> SolveResult:
    """Write ``inst`` to an LP file, run the configured command, read back its solution."""
    limit = cfg.time_limit if time_limit is None else time_limit
    workdir = tempfile.mkdtemp(prefix="apollo_", dir=scratch_root(cfg))
    lp_path = os.path.join(workdir, "model.lp")
    sol_path = os.path.join(workdir, "model.sol")
    with open(lp_path, "w") as fh:
        fh.write(write_lp(inst))
    cmd = cfg.command.format(lp=shlex.quote(lp_path), sol=shlex.quote(sol_path),
                             timelimit=f"{limit:g}")
    t0 = time.perf_counter()
    ok = False
    try:
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True,
                                  timeout=limit * (1 + cfg.grace) + 1.0)
        except subprocess.TimeoutExpired:
            log.warning("solver exceeded %.1fs; killed", limit)
            ok = True
            return SolveResult(SolveStatus.TIMEOUT_NO_INCUMBENT,
                               solve_seconds=time.perf_counter() - t0)
        elapsed = time.perf_counter() - t0
        if not os.path.exists(sol_path):
            if proc.returncode != 0:
                log.warning("solver exited with %d: %s", proc.returncode, proc.stderr[-500:])
            ok = proc.returncode == 0
            return SolveResult(SolveStatus.TIMEOUT_NO_INCUMBENT, solve_seconds=elapsed)
        with open(sol_path) as fh:
            raw = fh.read()
        try:
            status, x, _ = parse_solution(raw, cfg.dialect, inst.num_vars)
        except SolutionParseError as exc:
            exc.raw = raw + "\n--- solver output ---\n" + proc.stdout + proc.stderr
            raise
        if status == "infeasible":
            ok = True
            return SolveResult(SolveStatus.INFEASIBLE, solve_seconds=elapsed)
        if x is None:
            ok = True
            return SolveResult(SolveStatus.TIMEOUT_NO_INCUMBENT, solve_seconds=elapsed)
        x = _snap_integers(inst, x)
        report = check_feasibility(inst, x, 1e-6)
        if not report.feasible:
            raise IntegrityError(f"solver incumbent violates the model by "
                                 f"{report.max_violation:.3g} (files kept in {workdir})")
        st = SolveStatus.OPTIMAL if status == "optimal" else SolveStatus.FEASIBLE
        ok = True
        return SolveResult(st, x, evaluate_objective(inst, x), elapsed)
    finally:
        if ok and not cfg.keep_files:
            shutil.rmtree(workdir, ignore_errors=True)
