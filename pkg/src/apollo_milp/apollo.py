"""Alternating prediction-correction solve loop, schedules and gap metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .backend import BackendConfig, IntegrityError, SolutionParseError, SolveResult, \
    SolveStatus, solve
from .correction import TrustRegionSpec, build_trust_region, fix_consistent, fix_direct, \
    fix_predicted, select_partial
from .milp import MilpInstance, PartialAssignment, add_objective_cut, check_feasibility, \
    evaluate_objective, fix_variables

log = logging.getLogger(__name__)

STRATEGIES = ("apollo", "direct", "multips")

# per-family (k0, k1, delta) at the reference sizes below, and relative budgets
_REFERENCE = {
    "ca": (1500, [(400, 0, 60), (200, 0, 30), (100, 0, 15), (50, 0, 10)]),
    "sc": (5000, [(1000, 0, 200), (500, 0, 100), (250, 0, 50), (10, 0, 5)]),
}
_BUDGET_SHARES = (0.1, 0.1, 0.2, 0.6)


class InfeasibleInstanceError(RuntimeError):
    """The original instance was proven infeasible."""


@dataclass(frozen=True)
class IterationSpec:
    k0: int
    k1: int
    delta: int
    time_budget: float

    def __post_init__(self):
        if min(self.k0, self.k1, self.delta) < 0:
            raise ValueError("k0, k1 and delta must be nonnegative")
        if self.time_budget <= 0:
            raise ValueError("time budgets must be positive")


@dataclass(frozen=True)
class Schedule:
    iterations: tuple

    def __post_init__(self):
        its = tuple(it if isinstance(it, IterationSpec) else IterationSpec(*it)
                    for it in self.iterations)
        if not its:
            raise ValueError("a schedule needs at least one iteration")
        object.__setattr__(self, "iterations", its)

    def __len__(self):
        return len(self.iterations)

    @property
    def k_fix(self) -> int:
        return sum(it.k0 + it.k1 for it in self.iterations)

    @property
    def total_time(self) -> float:
        return sum(it.time_budget for it in self.iterations)

    def validate(self, n_binary: int):
        if self.k_fix > n_binary:
            raise ValueError(f"schedule fixes {self.k_fix} of {n_binary} binaries")

    @classmethod
    def desk_default(cls, n_binary: int, family: str = "ca",
                     total_time: float = 60.0) -> "Schedule":
        """Reference schedule scaled by ``n_binary / reference size``.

        Budgets split ``total_time`` as 10/10/20/60 percent.
        """
        ref_n, rows = _REFERENCE[family]
        s = n_binary / ref_n
        its = []
        for (k0, k1, d), share in zip(rows, _BUDGET_SHARES):
            k0s, k1s = int(round(k0 * s)), int(round(k1 * s))
            ds = min(max(int(round(d * s)), 1 if k0s + k1s else 0), k0s + k1s)
            its.append(IterationSpec(k0s, k1s, ds, total_time * share))
        return cls(tuple(its))

    def to_list(self):
        return [(it.k0, it.k1, it.delta, it.time_budget) for it in self.iterations]

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        """``"k0,k1,delta,budget;k0,k1,delta,budget;..."``"""
        its = []
        for part in text.split(";"):
            if part.strip():
                k0, k1, d, t = part.split(",")
                its.append(IterationSpec(int(k0), int(k1), int(d), float(t)))
        return cls(tuple(its))

    def format(self) -> str:
        return ";".join(f"{a},{b},{c},{t:g}" for a, b, c, t in self.to_list())


@dataclass
class IterationRecord:
    k0: int
    k1: int
    delta: int
    status: str
    reference_objective: Optional[float]
    n_selected: int
    n_new_fixed: int
    n_fixed: int
    consistent_fraction: Optional[float]
    elapsed: float
    attempts: int = 1
    cut_dropped: bool = False
    error: str = ""


@dataclass
class RunRecord:
    strategy: str
    status: str
    iterations: list = field(default_factory=list)
    objective: Optional[float] = None
    solution: Optional[np.ndarray] = None
    bks: Optional[float] = None
    gap_abs: Optional[float] = None
    gap_rel: Optional[float] = None
    # (scheduled time, wall time, best objective so far)
    trajectory: list = field(default_factory=list)
    fixed: PartialAssignment = field(default_factory=PartialAssignment)

    @property
    def n_fixed(self) -> int:
        return len(self.fixed)

    def set_bks(self, bks: Optional[float]):
        self.bks = bks
        if bks is not None and self.objective is not None:
            self.gap_abs, self.gap_rel = compute_gaps(self.objective, bks)
        return self


def compute_gaps(obj: float, bks: float):
    """``(|obj - bks|, |obj - bks| / |bks|)``; the relative gap is ``None`` when ``bks == 0``."""
    if not np.isfinite(bks):
        raise ValueError("bks must be finite")
    gap = abs(obj - bks)
    return gap, (gap / abs(bks) if bks != 0 else None)


def _attempt(inst, cfg, budget):
    try:
        return solve(inst, cfg, time_limit=budget), ""
    except (SolutionParseError, IntegrityError) as exc:
        log.warning("backend error: %s", exc)
        return SolveResult(SolveStatus.TIMEOUT_NO_INCUMBENT), f"{type(exc).__name__}: {exc}"


def run_apollo(inst: MilpInstance, predictor, schedule: Schedule, backend: BackendConfig,
               cut: bool = False, strategy: str = "apollo") -> RunRecord:
    """Alternate prediction, trust-region search and variable fixing.

    Parameters
    ----------
    inst : MilpInstance
        Original problem.
    predictor : object
        Anything with ``predict_proba(inst)`` returning one probability per
        binary variable.
    schedule : Schedule
        Per-iteration ``(k0, k1, delta, time_budget)``.  ``k0`` and ``k1`` are
        clipped to the binaries still free.
    backend : BackendConfig
    cut : bool
        Require each trust-region solve to improve strictly on the incumbent.
    strategy : {"apollo", "direct", "multips"}
        Fix agreeing variables, the reference values on the whole partial
        solution, or the predicted values on the whole partial solution.

    Returns
    -------
    RunRecord
        The incumbent is always verified against ``inst`` itself.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    fixers = {"apollo": lambda pa, ref: fix_consistent(pa, ref),
              "direct": lambda pa, ref: fix_direct(ref, pa),
              "multips": lambda pa, ref: fix_predicted(pa)}
    rec = RunRecord(strategy=strategy, status="running")
    current = inst
    fixed = PartialAssignment()
    best_x, best_obj = None, None
    sched_t, t0 = 0.0, time.perf_counter()
    last = len(schedule) - 1

    for k, it in enumerate(schedule.iterations):
        t_it = time.perf_counter()
        probs = predictor.predict_proba(current)
        free = int(np.count_nonzero(~current.fixed_mask[current.binary_indices]))
        k1 = min(it.k1, free)
        k0 = min(it.k0, free - k1)
        delta = min(it.delta, k0 + k1)
        pa = select_partial(current, probs, TrustRegionSpec(k0, k1, delta))

        # failure fallback: retry once with a doubled radius, then fix nothing
        radii = [delta]
        if min(max(2 * delta, 1), len(pa)) != delta:
            radii.append(min(max(2 * delta, 1), len(pa)))
        res, err, attempts, cut_dropped = None, "", 0, False
        use_cut = cut and best_obj is not None
        for radius in radii:
            tr = build_trust_region(current, pa, radius)
            if use_cut:
                attempts += 1
                res, err = _attempt(add_objective_cut(tr, best_obj), backend, it.time_budget)
                if res.has_incumbent:
                    break
                if res.status != SolveStatus.INFEASIBLE:
                    continue
                use_cut, cut_dropped = False, True
            attempts += 1
            res, err = _attempt(tr, backend, it.time_budget)
            if res.has_incumbent:
                break
        sched_t += it.time_budget

        ref_obj, new_fix, frac = None, PartialAssignment(), None
        if res.has_incumbent:
            x = res.incumbent
            if not check_feasibility(inst, x, 1e-6):
                raise IntegrityError("reference solution infeasible for the original instance")
            ref_obj = evaluate_objective(inst, x)
            if best_obj is None or ref_obj < best_obj:
                best_x, best_obj = x, ref_obj
            if k < last:
                new_fix = fixers[strategy](pa, x)
                frac = len(fix_consistent(pa, x)) / len(pa) if len(pa) else None
        elif k == 0:
            proof, _ = _attempt(inst, backend, it.time_budget)
            if proof.status == SolveStatus.INFEASIBLE:
                raise InfeasibleInstanceError(f"{inst.name} is infeasible")
            if proof.has_incumbent and check_feasibility(inst, proof.incumbent, 1e-6):
                best_x, best_obj = proof.incumbent, evaluate_objective(inst, proof.incumbent)

        if len(new_fix):
            current = fix_variables(current, new_fix)
            fixed = fixed.union(new_fix)
        if best_obj is not None:
            rec.trajectory.append((sched_t, time.perf_counter() - t0, best_obj))
        rec.iterations.append(IterationRecord(
            k0=k0, k1=k1, delta=delta, status=str(res.status), reference_objective=ref_obj,
            n_selected=len(pa), n_new_fixed=len(new_fix), n_fixed=len(fixed),
            consistent_fraction=frac, elapsed=time.perf_counter() - t_it, attempts=attempts,
            cut_dropped=cut_dropped, error=err))

    rec.fixed = fixed
    rec.objective, rec.solution = best_obj, best_x
    rec.status = "ok" if best_x is not None else "no-incumbent"
    return rec


class ApolloSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`run_apollo`.

    ``fit`` trains the wrapped predictor when it is trainable; ``solve``
    returns the full :class:`RunRecord` and ``predict`` just the solutions.
    """

    def __init__(self, predictor=None, schedule=None, backend=None, cut=False,
                 strategy="apollo", total_time=60.0, family="ca"):
        self.predictor = predictor
        self.schedule = schedule
        self.backend = backend
        self.cut = cut
        self.strategy = strategy
        self.total_time = total_time
        self.family = family

    def fit(self, instances, pools=None, **kw):
        if hasattr(self.predictor, "fit") and pools is not None:
            self.predictor.fit(instances, pools, **kw)
        return self

    def _schedule_for(self, inst):
        if self.schedule is not None:
            return self.schedule
        return Schedule.desk_default(inst.binary_indices.size, self.family, self.total_time)

    def solve(self, inst: MilpInstance) -> RunRecord:
        if self.predictor is None:
            raise ValueError("ApolloSolver needs a predictor")
        return run_apollo(inst, self.predictor, self._schedule_for(inst),
                          self.backend or BackendConfig(), self.cut, self.strategy)

    def predict(self, instances):
        if isinstance(instances, MilpInstance):
            return self.solve(instances).solution
        return [self.solve(i).solution for i in instances]
