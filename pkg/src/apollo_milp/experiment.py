"""Batch pool collection and strategy comparison with CSV output.

CSV schemas (fixed column order)
--------------------------------
``results.csv``
    instance, strategy, status, objective, bks, bks_source, gap_abs, gap_rel,
    n_fixed, n_iterations, seed, error.  One row per (instance, strategy)
    followed by one ``instance="__mean__"`` row per strategy averaging the
    numeric columns over rows where they are present.
``iterations.csv``
    instance, strategy, iteration, k0, k1, delta, status, reference_objective,
    n_selected, n_new_fixed, n_fixed, consistent_fraction, attempts, cut_dropped.
``trajectory.csv``
    instance, strategy, time, objective, gap_abs.  ``time`` is the cumulative
    scheduled budget at the end of each iteration, so the file is reproducible.
``timings.csv``
    instance, strategy, iteration, wall_seconds.  Wall-clock data, kept apart
    from the reproducible files.
"""

from __future__ import annotations

import csv
import dataclasses
import glob
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .apollo import STRATEGIES, RunRecord, Schedule, run_apollo
from .backend import SCRATCH_ENV, BackendConfig, SolveStatus, solve, solve_enumerate
from .lpformat import read_lp_file
from .milp import BINARY, GE, MilpInstance, add_constraint, check_feasibility, \
    evaluate_objective
from .predictor import OraclePredictor, SolutionPool

log = logging.getLogger(__name__)

BASELINE = "baseline-solver"
RESULT_COLUMNS = ["instance", "strategy", "status", "objective", "bks", "bks_source",
                  "gap_abs", "gap_rel", "n_fixed", "n_iterations", "seed", "error"]
ITERATION_COLUMNS = ["instance", "strategy", "iteration", "k0", "k1", "delta", "status",
                     "reference_objective", "n_selected", "n_new_fixed", "n_fixed",
                     "consistent_fraction", "attempts", "cut_dropped"]
TRAJECTORY_COLUMNS = ["instance", "strategy", "time", "objective", "gap_abs"]
TIMING_COLUMNS = ["instance", "strategy", "iteration", "wall_seconds"]
MEAN_ROW = "__mean__"


def list_instances(instance_dir) -> list:
    return sorted(glob.glob(os.path.join(instance_dir, "*.lp")))


def instance_name(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def pool_path(lp_path, out_dir=None) -> str:
    d = out_dir or os.path.dirname(lp_path)
    return os.path.join(d, instance_name(lp_path) + ".pool.json")


def enumerable(inst: MilpInstance, cfg: BackendConfig) -> bool:
    free = np.count_nonzero(~inst.fixed_mask)
    return bool(np.all(inst.kinds == BINARY)) and free <= cfg.max_enum_vars


def no_good_row(inst: MilpInstance, x):
    """Coefficients and rhs excluding the binary pattern of ``x``."""
    b = inst.binary_indices
    ones = np.round(x[b]) == 1
    coefs = dict(zip(b.tolist(), np.where(ones, -1.0, 1.0).tolist()))
    return coefs, 1.0 - float(np.count_nonzero(ones))


def collect_pool(inst: MilpInstance, cfg: BackendConfig, m: int = 20):
    """Up to ``m`` best distinct feasible solutions and a status word.

    The enumerator ranks solutions exactly.  For external backends each
    solve adds a no-good row excluding the previous incumbent's binary
    pattern, so the pool is the ``m``-best list when every solve is optimal.
    """
    if cfg.kind == "enumerate":
        res = solve_enumerate(inst, cfg, pool_size=m)
        if res.status == SolveStatus.INFEASIBLE:
            return SolutionPool(m), "infeasible"
        return res.pool, "ok"
    pool = SolutionPool(m)
    work = inst
    status = "ok"
    for k in range(m):
        res = solve(work, cfg)
        if not res.has_incumbent:
            if k == 0:
                status = "infeasible" if res.status == SolveStatus.INFEASIBLE else "no-incumbent"
            break
        pool.add(res.incumbent, evaluate_objective(inst, res.incumbent))
        if inst.binary_indices.size == 0:
            break
        coefs, rhs = no_good_row(inst, res.incumbent)
        work = add_constraint(work, coefs, GE, rhs)
    return pool, status


def collect_pools(instance_dir, cfg: BackendConfig, m: int = 20, out_dir=None) -> list:
    """Write ``<name>.pool.json`` for every ``*.lp`` in ``instance_dir``; returns the paths."""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    paths = []
    for lp in list_instances(instance_dir):
        inst = read_lp_file(lp)
        pool, status = collect_pool(inst, cfg, m)
        for x, _ in pool:
            if not check_feasibility(inst, x, 1e-6):
                raise RuntimeError(f"infeasible pool member for {lp}")
        path = pool_path(lp, out_dir)
        pool.save(path, name=instance_name(lp), status=status)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class OracleConfig:
    """Noisy-oracle predictor centred on each instance's reference solution."""

    eps: float = 0.0
    conf: float = 1.0


def instance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def family_of(name: str) -> str:
    return "sc" if name.startswith("sc") else "ca"


@dataclass
class InstanceOutcome:
    name: str
    results: list
    iterations: list
    trajectory: list
    timings: list


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _run_instance(idx, lp, strategies, schedule, total_time, backend, seed, predictor,
                  cut, reference_time):
    name = instance_name(lp)
    iseed = instance_seed(seed, idx)
    rows, iters, traj, timings = [], [], [], []
    try:
        inst = read_lp_file(lp)
    except Exception as exc:  # record and continue the batch
        rows = [dict(instance=name, strategy=s, status="error", seed=iseed,
                     error=f"{type(exc).__name__}: {exc}") for s in strategies]
        return InstanceOutcome(name, rows, iters, traj, timings)
    sched = schedule or Schedule.desk_default(inst.binary_indices.size, family_of(name),
                                              total_time)
    bks, bks_source, reference = None, "best-found", None
    if enumerable(inst, backend):
        opt = solve_enumerate(inst, backend)
        if opt.has_incumbent:
            bks, bks_source, reference = opt.objective, "enumerator", opt.incumbent

    records = {}
    objectives = []
    for s in strategies:
        t0 = time.perf_counter()
        try:
            if s == BASELINE:
                res = solve(inst, backend, time_limit=sched.total_time)
                rec = RunRecord(strategy=s, status=str(res.status), objective=res.objective,
                                solution=res.incumbent)
                rec.trajectory = ([(sched.total_time, res.solve_seconds, res.objective)]
                                  if res.has_incumbent else [])
                if reference is None and res.has_incumbent:
                    reference = res.incumbent
            else:
                if isinstance(predictor, OracleConfig):
                    if reference is None:
                        ref = solve(inst, backend, time_limit=reference_time or sched.total_time)
                        if not ref.has_incumbent:
                            raise RuntimeError(f"no reference solution ({ref.status})")
                        reference = ref.incumbent
                        objectives.append(ref.objective)
                    pred = OraclePredictor(reference, predictor.eps, predictor.conf, iseed)
                elif predictor is not None:
                    pred = predictor
                else:
                    raise ValueError(f"strategy {s!r} needs a predictor")
                rec = run_apollo(inst, pred, sched, backend, cut=cut, strategy=s)
            records[s] = (rec, "")
            if rec.objective is not None:
                objectives.append(rec.objective)
        except Exception as exc:
            log.warning("%s / %s failed: %s", name, s, exc)
            records[s] = (None, f"{type(exc).__name__}: {exc}")
        timings.append(dict(instance=name, strategy=s, iteration="total",
                            wall_seconds=time.perf_counter() - t0))

    if bks is None and objectives:
        bks = min(objectives)
    for s in strategies:
        rec, err = records[s]
        if rec is None:
            rows.append(dict(instance=name, strategy=s, status="error", bks=bks,
                             bks_source=bks_source, seed=iseed, error=err))
            continue
        if bks is not None:
            rec.set_bks(bks)
        rows.append(dict(instance=name, strategy=s, status=rec.status, objective=rec.objective,
                         bks=bks, bks_source=bks_source, gap_abs=rec.gap_abs,
                         gap_rel=rec.gap_rel, n_fixed=rec.n_fixed,
                         n_iterations=len(rec.iterations), seed=iseed, error=err))
        for k, it in enumerate(rec.iterations):
            iters.append(dict(instance=name, strategy=s, iteration=k, k0=it.k0, k1=it.k1,
                              delta=it.delta, status=it.status,
                              reference_objective=it.reference_objective,
                              n_selected=it.n_selected, n_new_fixed=it.n_new_fixed,
                              n_fixed=it.n_fixed, consistent_fraction=it.consistent_fraction,
                              attempts=it.attempts, cut_dropped=it.cut_dropped))
            timings.append(dict(instance=name, strategy=s, iteration=k,
                                wall_seconds=it.elapsed))
        for t_sched, _, obj in rec.trajectory:
            traj.append(dict(instance=name, strategy=s, time=t_sched, objective=obj,
                             gap_abs=abs(obj - bks) if bks is not None else None))
    return InstanceOutcome(name, rows, iters, traj, timings)


def aggregate(rows: Sequence[dict], strategies) -> list:
    """Per-strategy mean rows over the numeric result columns."""
    out = []
    for s in strategies:
        sel = [r for r in rows if r["strategy"] == s]
        agg = dict(instance=MEAN_ROW, strategy=s,
                   status=f"{sum(r['status'] not in ('error', 'no-incumbent') for r in sel)}"
                          f"/{len(sel)}")
        for col in ("objective", "bks", "gap_abs", "gap_rel", "n_fixed", "n_iterations"):
            vals = [r[col] for r in sel if r.get(col) is not None]
            agg[col] = float(np.mean(vals)) if vals else None
        out.append(agg)
    return out


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in columns})


GNUPLOT_STUB = """\
# gap_abs versus scheduled time per strategy, from trajectory.csv
set datafile separator ","
set key autotitle columnhead
set xlabel "scheduled time (s)"
set ylabel "mean absolute primal gap"
set logscale y
plot for [s in "{strategies}"] \\
    sprintf("< awk -F, '$2==\\"%s\\"' trajectory.csv", s) using 3:5 with points title s
"""


def run_experiment(instance_dir, strategies=("apollo", BASELINE), schedule: Optional[Schedule] = None,
                   backend: Optional[BackendConfig] = None, seed: int = 0, predictor=None,
                   out_dir: str = "results", total_time: float = 60.0, cut: bool = False,
                   workers: int = 1, gnuplot_stub: bool = False,
                   reference_time: Optional[float] = None) -> dict:
    """Run each strategy on each ``*.lp`` instance and write the CSV files.

    Parameters
    ----------
    predictor : OracleConfig, estimator or None
        ``OracleConfig`` builds a per-instance noisy oracle around the
        enumerator optimum or, failing that, a full solve.
    schedule : Schedule, optional
        Defaults to :meth:`Schedule.desk_default` per instance, with the
        family guessed from the file name and budgets summing to ``total_time``.

    Returns a dict of the written file paths plus ``"rows"``.
    """
    backend = backend or BackendConfig()
    for s in strategies:
        if s not in STRATEGIES and s != BASELINE:
            raise ValueError(f"unknown strategy {s!r}")
    os.makedirs(out_dir, exist_ok=True)
    lps = list_instances(instance_dir)
    if not lps:
        log.warning("no *.lp instances in %s", instance_dir)

    def job(args):
        idx, lp = args
        cfg = backend
        if backend.scratch_dir or os.environ.get(SCRATCH_ENV):
            root = backend.scratch_dir or os.environ[SCRATCH_ENV]
            cfg = dataclasses.replace(backend, scratch_dir=os.path.join(root, f"w{idx}"))
        return _run_instance(idx, lp, list(strategies), schedule, total_time, cfg, seed,
                             predictor, cut, reference_time)

    if workers > 1 and len(lps) > 1:
        with ThreadPoolExecutor(workers) as ex:
            outcomes = list(ex.map(job, enumerate(lps)))
    else:
        outcomes = [job(a) for a in enumerate(lps)]

    rows = [r for o in outcomes for r in o.results]
    rows += aggregate(rows, strategies) if rows else []
    paths = {k: os.path.join(out_dir, f"{k}.csv")
             for k in ("results", "iterations", "trajectory", "timings")}
    _write_csv(paths["results"], RESULT_COLUMNS, rows)
    _write_csv(paths["iterations"], ITERATION_COLUMNS, [r for o in outcomes for r in o.iterations])
    _write_csv(paths["trajectory"], TRAJECTORY_COLUMNS, [r for o in outcomes for r in o.trajectory])
    _write_csv(paths["timings"], TIMING_COLUMNS, [r for o in outcomes for r in o.timings])
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"instance_dir": str(instance_dir), "strategies": list(strategies),
                   "schedule": schedule.format() if schedule else None,
                   "total_time": total_time, "seed": seed, "cut": cut,
                   "backend": dataclasses.asdict(backend) | {"scratch_dir": None},
                   "predictor": (dataclasses.asdict(predictor)
                                 if isinstance(predictor, OracleConfig)
                                 else type(predictor).__name__ if predictor else None)},
                  fh, indent=2, sort_keys=True)
    if gnuplot_stub:
        paths["gnuplot"] = os.path.join(out_dir, "plot_gaps.gp")
        with open(paths["gnuplot"], "w") as fh:
            fh.write(GNUPLOT_STUB.format(strategies=" ".join(strategies)))
    paths["rows"] = rows
    return paths
