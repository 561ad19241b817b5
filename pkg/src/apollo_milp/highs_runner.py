"""Command-line shim running HiGHS on an LP file and writing a solution file.

Usage::

    python -m apollo_milp.highs_runner model.lp --timelimit 10 --sol model.sol [--dialect plain]

Uses ``highspy`` when installed, otherwise :func:`scipy.optimize.milp`
(which also wraps HiGHS).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .solfile import format_solution


def _solve_highspy(path, timelimit):
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", float(timelimit))
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    if h.readModel(path) != highspy.HighsStatus.kOk:
        raise RuntimeError(f"HiGHS could not read {path}")
    h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    if status == highspy.HighsModelStatus.kInfeasible:
        return "infeasible", None, None
    if info.primal_solution_status == 0:
        return "timelimit", None, None
    x = np.array(h.getSolution().col_value, dtype=np.float64)
    # highspy orders columns by first appearance; map back by name
    lp = h.getLp()
    names = list(lp.col_names_)
    out = np.zeros(len(names))
    for k, name in enumerate(names):
        out[int(name[1:])] = x[k]
    word = "optimal" if status == highspy.HighsModelStatus.kOptimal else "feasible"
    return word, out, info.objective_function_value


def _solve_scipy(path, timelimit):
    from scipy.optimize import Bounds, LinearConstraint, milp

    from .lpformat import read_lp_file

    inst = read_lp_file(path)
    lo = np.where(inst.senses == "L", -np.inf, inst.rhs)
    hi = np.where(inst.senses == "G", np.inf, inst.rhs)
    cons = [LinearConstraint(inst.A, lo, hi)] if inst.num_cons else []
    res = milp(inst.c, constraints=cons, bounds=Bounds(inst.lb, inst.ub),
               integrality=(inst.kinds != "C").astype(int),
               options={"time_limit": float(timelimit), "disp": False})
    if res.status == 2:
        return "infeasible", None, None
    if res.x is None:
        return "timelimit", None, None
    return ("optimal" if res.status == 0 else "feasible"), res.x, float(inst.c @ res.x)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="apollo_milp.highs_runner")
    ap.add_argument("lp")
    ap.add_argument("--timelimit", type=float, default=60.0)
    ap.add_argument("--sol", required=True)
    ap.add_argument("--dialect", choices=["plain", "xml-lite"], default="plain")
    ap.add_argument("--engine", choices=["auto", "highspy", "scipy"], default="auto")
    args = ap.parse_args(argv)

    engine = args.engine
    if engine == "auto":
        try:
            import highspy  # noqa: F401
            engine = "highspy"
        except ImportError:
            engine = "scipy"
    solver = _solve_highspy if engine == "highspy" else _solve_scipy
    status, x, objective = solver(args.lp, args.timelimit)
    with open(args.sol, "w") as fh:
        fh.write(format_solution(x, status, objective, args.dialect))
    return 0


if __name__ == "__main__":
    sys.exit(main())
