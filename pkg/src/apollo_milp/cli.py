"""``apollo-milp`` command line.

Every subcommand accepts ``--config path``: a text file of ``key = value``
lines (``#`` comments, blank lines ignored) whose keys are the long flag
names with or without dashes (``time-limit`` or ``time_limit``).  Values
from the file become defaults; explicit flags win.  Boolean flags take
``true``/``false``.  Temporary solver files go under ``$APOLLO_SCRATCH``
when set.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .apollo import STRATEGIES, Schedule, run_apollo
from .backend import BackendConfig, solve
from .correction import TrustRegionSpec, build_trust_region, fix_consistent, select_partial, \
    uebo_report
from .experiment import BASELINE, OracleConfig, collect_pools, instance_name, \
    list_instances, pool_path, run_experiment
from .features import featurize, save_graph
from .generators import CaParams, ScParams, gen_ca, gen_sc
from .lpformat import read_lp_file, write_lp_file
from .milp import fix_variables
from .predictor import GnnPredictor, OraclePredictor, SolutionPool
from .solfile import format_solution, parse_solution

log = logging.getLogger("apollo_milp")


class ConfigError(ValueError):
    pass


def read_config(path) -> dict:
    """Parse a ``key = value`` config file into a dict of strings."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _apply_config(parser: argparse.ArgumentParser, cfg: dict):
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, val in cfg.items():
        if key == "config" or key not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        act = actions[key]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = val.lower()
            if low not in _TRUE | _FALSE:
                raise ConfigError(f"{key}: expected true or false, got {val!r}")
            defaults[key] = low in _TRUE
        else:
            defaults[key] = act.type(val) if act.type else val
            if act.choices and defaults[key] not in act.choices:
                raise ConfigError(f"{key}: {val!r} not in {sorted(act.choices)}")
        act.required = False
    parser.set_defaults(**defaults)


def _backend_args(p, time_limit=60.0):
    p.add_argument("--backend", default="highs",
                   help="'enumerate', 'highs' or a command template with {lp} {sol} {timelimit}")
    p.add_argument("--time-limit", type=float, default=time_limit)
    p.add_argument("--dialect", choices=["plain", "xml-lite"], default="plain")
    p.add_argument("--max-enum-vars", type=int, default=24)


def _backend(args) -> BackendConfig:
    return BackendConfig.from_spec(args.backend, time_limit=args.time_limit,
                                   dialect=args.dialect, max_enum_vars=args.max_enum_vars)


def _predictor_args(p):
    p.add_argument("--model", help="trained model file")
    p.add_argument("--oracle-solution", help="solution file for a noisy-oracle predictor")
    p.add_argument("--oracle-eps", type=float, default=0.0)
    p.add_argument("--oracle-conf", type=float, default=1.0)


def _schedule_args(p):
    p.add_argument("--schedule", help="'k0,k1,delta,budget;...' (default: scaled per family)")
    p.add_argument("--total-time", type=float, default=60.0)
    p.add_argument("--family", choices=["ca", "sc"], default=None)
    p.add_argument("--cut", action="store_true", help="enable the objective improvement cut")
    p.add_argument("--strategy", choices=STRATEGIES, default="apollo")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apollo-milp",
                                 description="Alternating prediction-correction MILP solving")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write seeded CA or SC instances")
    p.add_argument("--family", choices=["ca", "sc"], required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--items", type=int, default=CaParams.items)
    p.add_argument("--bids", type=int, default=CaParams.bids)
    p.add_argument("--rows", type=int, default=ScParams.rows)
    p.add_argument("--cols", type=int, default=ScParams.cols)
    p.add_argument("--density", type=float, default=ScParams.density)
    p.add_argument("--max-cost", type=int, default=ScParams.max_cost)

    p = sub.add_parser("collect", help="collect solution pools for training")
    p.add_argument("--data", required=True)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--out", default=None, help="pool directory (default: next to the instances)")
    _backend_args(p)

    p = sub.add_parser("train", help="train the GNN predictor on instances with pools")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--pools", default=None, help="pool directory (default: --data)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-epochs", type=int, default=10_000)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--augment", type=int, default=0, help="reduced copies per instance")
    p.add_argument("--augment-backend", default=None,
                   help="re-collect pools for reduced copies with this backend")
    p.add_argument("--fixed-flag", action="store_true")

    p = sub.add_parser("predict", help="write marginals for one instance")
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", default=None, help="also dump the graph features here")

    p = sub.add_parser("correct", help="one trust-region search and consistency fixing step")
    p.add_argument("--instance", required=True)
    p.add_argument("--marginals", required=True)
    p.add_argument("--k0", type=int, required=True)
    p.add_argument("--k1", type=int, required=True)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--out-dir", default=".")
    _backend_args(p)

    p = sub.add_parser("solve", help="run the full alternating loop on one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True, help="solution file")
    p.add_argument("--record", default=None, help="per-iteration CSV")
    p.add_argument("--seed", type=int, default=0)
    _predictor_args(p)
    _schedule_args(p)
    _backend_args(p)

    p = sub.add_parser("experiment", help="compare strategies over an instance directory")
    p.add_argument("--data", required=True)
    p.add_argument("--strategies", default="apollo,direct,multips," + BASELINE)
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--gnuplot-stub", action="store_true")
    p.add_argument("--model", help="trained model file (default: noisy oracle)")
    p.add_argument("--oracle-eps", type=float, default=0.0)
    p.add_argument("--oracle-conf", type=float, default=1.0)
    p.add_argument("--schedule", default=None)
    p.add_argument("--total-time", type=float, default=60.0)
    p.add_argument("--cut", action="store_true")
    _backend_args(p)

    for p in sub.choices.values():
        p.add_argument("--config", default=None, help="key = value defaults file")
    return ap


def parse_args(argv=None):
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # first pass only to locate the subcommand and its config file
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    cmd = next((a for a in argv if a in ap._subparsers._group_actions[0].choices), None)
    if cmd is not None:
        known, _ = pre.parse_known_args(argv[argv.index(cmd) + 1:])
        if known.config:
            sub = ap._subparsers._group_actions[0].choices[cmd]
            _apply_config(sub, read_config(known.config))
    return ap.parse_args(argv)


# -- subcommands -------------------------------------------------------------

def cmd_generate(a):
    os.makedirs(a.out, exist_ok=True)
    manifest = {"family": a.family, "count": a.count, "seed": a.seed, "instances": []}
    for k in range(a.count):
        s = a.seed + k
        if a.family == "ca":
            params = CaParams(items=a.items, bids=a.bids, seed=s)
            inst = gen_ca(params)
        else:
            params = ScParams(rows=a.rows, cols=a.cols, density=a.density,
                              max_cost=a.max_cost, seed=s)
            inst = gen_sc(params)
        path = os.path.join(a.out, inst.name + ".lp")
        write_lp_file(inst, path)
        manifest["instances"].append({"file": os.path.basename(path), "params": params.to_dict(),
                                      "stats": inst.stats()})
    with open(os.path.join(a.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {a.count} instances to {a.out}")


def cmd_collect(a):
    paths = collect_pools(a.data, _backend(a), a.m, a.out)
    print(f"wrote {len(paths)} pools")


def _load_set(data_dir, pool_dir):
    insts, pools = [], []
    for lp in list_instances(data_dir):
        pp = pool_path(lp, pool_dir)
        if not os.path.exists(pp):
            log.warning("no pool for %s; skipped", lp)
            continue
        pool = SolutionPool.load(pp)
        if len(pool) == 0:
            log.warning("empty pool for %s; skipped", lp)
            continue
        insts.append(read_lp_file(lp))
        pools.append(pool)
    return insts, pools


def cmd_train(a):
    insts, pools = _load_set(a.data, a.pools)
    if not insts:
        raise SystemExit("no training instances with pools")
    vi, vp = _load_set(a.val, None) if a.val else (None, None)
    est = GnnPredictor(hidden_size=a.hidden, n_layers=a.layers, learning_rate=a.lr,
                       max_epochs=a.max_epochs, patience=a.patience, n_augment=a.augment,
                       augment_backend=(BackendConfig.from_spec(a.augment_backend)
                                        if a.augment_backend else None),
                       fixed_flag=a.fixed_flag, seed=a.seed)
    est.fit(insts, pools, vi or None, vp or None,
            log=lambda ep, tr, va: log.info("epoch %d train %.6f val %s", ep, tr, va))
    est.save(a.out)
    r = est.train_result_
    print(f"epochs {r.epochs} best validation loss {r.best_val_loss:.6f}")


def write_marginals(path, inst, probs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["varName", "prob"])
        for j, p in zip(inst.binary_indices, probs):
            w.writerow([f"x{j}", repr(float(p))])


def read_marginals(path, inst) -> np.ndarray:
    probs = np.full(inst.num_vars, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            probs[int(row["varName"][1:])] = float(row["prob"])
    out = probs[inst.binary_indices]
    if np.isnan(out).any():
        raise ValueError(f"{path} lacks marginals for some binary variables")
    return out


def cmd_predict(a):
    est = GnnPredictor.load(a.model)
    inst = read_lp_file(a.instance)
    write_marginals(a.out, inst, est.predict_proba(inst))
    if a.features:
        save_graph(featurize(inst, est.fixed_flag), a.features)


def cmd_correct(a):
    inst = read_lp_file(a.instance)
    probs = read_marginals(a.marginals, inst)
    pa = select_partial(inst, probs, TrustRegionSpec(a.k0, a.k1, a.delta))
    res = solve(build_trust_region(inst, pa, a.delta), _backend(a))
    os.makedirs(a.out_dir, exist_ok=True)
    name = instance_name(a.instance)
    with open(os.path.join(a.out_dir, name + ".ref.sol"), "w") as fh:
        fh.write(format_solution(res.incumbent, str(res.status), res.objective))
    if not res.has_incumbent:
        print(f"trust-region search returned {res.status}; nothing fixed")
        write_lp_file(inst, os.path.join(a.out_dir, name + ".reduced.lp"))
        return 1
    rep = uebo_report(inst, probs, pa, res.incumbent)
    with open(os.path.join(a.out_dir, name + ".uebo.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["var", "p", "ref", "H", "d", "uebo", "consistent"])
        for j, p, ref, h, d, u, ok in rep.rows():
            w.writerow([f"x{j}", repr(p), ref, repr(h), repr(d), repr(u), int(ok)])
    fixed = fix_consistent(pa, res.incumbent)
    write_lp_file(fix_variables(inst, fixed), os.path.join(a.out_dir, name + ".reduced.lp"))
    print(f"reference objective {res.objective!r}; fixed {len(fixed)} of {len(pa)}")
    return 0


def _read_solution_file(path, inst):
    with open(path) as fh:
        text = fh.read()
    dialect = "xml-lite" if text.lstrip().startswith("<") else "plain"
    _, x, _ = parse_solution(text, dialect, inst.num_vars)
    if x is None:
        raise ValueError(f"{path} holds no solution values")
    return x


def cmd_solve(a):
    inst = read_lp_file(a.instance)
    if a.model:
        pred = GnnPredictor.load(a.model)
    elif a.oracle_solution:
        pred = OraclePredictor(_read_solution_file(a.oracle_solution, inst), a.oracle_eps,
                               a.oracle_conf, a.seed)
    else:
        raise SystemExit("solve needs --model or --oracle-solution")
    family = a.family or ("sc" if inst.name.startswith("sc") else "ca")
    sched = (Schedule.parse(a.schedule) if a.schedule
             else Schedule.desk_default(inst.binary_indices.size, family, a.total_time))
    rec = run_apollo(inst, pred, sched, _backend(a), cut=a.cut, strategy=a.strategy)
    with open(a.out, "w") as fh:
        fh.write(format_solution(rec.solution, rec.status if rec.solution is None
                                 else "feasible", rec.objective, a.dialect))
    if a.record:
        with open(a.record, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "k0", "k1", "delta", "status", "reference_objective",
                        "n_new_fixed", "n_fixed", "consistent_fraction", "elapsed"])
            for k, it in enumerate(rec.iterations):
                w.writerow([k, it.k0, it.k1, it.delta, it.status,
                            "" if it.reference_objective is None else repr(it.reference_objective),
                            it.n_new_fixed, it.n_fixed,
                            "" if it.consistent_fraction is None else repr(it.consistent_fraction),
                            f"{it.elapsed:.3f}"])
    print(f"objective {rec.objective!r}; fixed {rec.n_fixed} variables")
    return 0 if rec.solution is not None else 1


def cmd_experiment(a):
    strategies = [s.strip() for s in a.strategies.split(",") if s.strip()]
    pred = GnnPredictor.load(a.model) if a.model else OracleConfig(a.oracle_eps, a.oracle_conf)
    paths = run_experiment(a.data, strategies, Schedule.parse(a.schedule) if a.schedule else None,
                           _backend(a), a.seed, pred, a.out, a.total_time, a.cut, a.workers,
                           a.gnuplot_stub)
    print(f"wrote {paths['results']}")


COMMANDS = {"generate": cmd_generate, "collect": cmd_collect, "train": cmd_train,
            "predict": cmd_predict, "correct": cmd_correct, "solve": cmd_solve,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args) or 0


if __name__ == "__main__":
    sys.exit(main())
