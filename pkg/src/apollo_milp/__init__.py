"""Alternating prediction-correction heuristics for mixed-integer linear programs.

Public names are imported lazily so that light entry points (such as the
HiGHS solver shim) start quickly.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "apollo": ["ApolloSolver", "RunRecord", "Schedule", "compute_gaps", "run_apollo"],
    "backend": ["BackendConfig", "SolveResult", "SolveStatus", "solve_enumerate",
                "solve_external"],
    "correction": ["TrustRegionSpec", "build_trust_region", "fix_consistent", "fix_direct",
                   "fix_predicted", "select_partial", "uebo"],
    "features": ["BipartiteGraph", "featurize"],
    "generators": ["CaParams", "ScParams", "gen_ca", "gen_sc"],
    "lpformat": ["read_lp", "write_lp"],
    "milp": ["MilpInstance", "PartialAssignment", "add_objective_cut", "check_feasibility",
             "evaluate_objective", "fix_variables"],
    "predictor": ["GnnPredictor", "OraclePredictor", "SolutionPool", "pool_targets"],
}
_LOOKUP = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_LOOKUP)


def __getattr__(name):
    if name in _LOOKUP:
        return getattr(importlib.import_module(f".{_LOOKUP[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__ + ["__version__"]
