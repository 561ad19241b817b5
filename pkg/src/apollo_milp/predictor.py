"""Marginal predictors, solution pools and training targets.

Predictors follow the scikit-learn estimator conventions: constructor
arguments are hyperparameters (``get_params``/``set_params`` come from
:class:`sklearn.base.BaseEstimator`), ``fit`` learns state stored in
trailing-underscore attributes, and ``predict_proba(inst)`` returns one
probability per binary variable of ``inst`` in ``inst.binary_indices`` order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gnn
from .features import N_VAR_FEATURES, featurize
from .milp import MilpInstance, PartialAssignment, check_feasibility, evaluate_objective, \
    fix_variables


@dataclass
class SolutionPool:
    """Distinct feasible solutions sorted by ascending objective, at most ``capacity``."""

    capacity: int = 20
    solutions: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    def __len__(self):
        return len(self.solutions)

    def __iter__(self):
        return iter(zip(self.solutions, self.objectives))

    def add(self, x, objective: float) -> bool:
        x = np.asarray(x, dtype=np.float64)
        for y in self.solutions:
            if np.array_equal(x, y):
                return False
        pos = int(np.searchsorted(self.objectives, objective, side="right"))
        if pos >= self.capacity:
            return False
        self.solutions.insert(pos, x)
        self.objectives.insert(pos, float(objective))
        del self.solutions[self.capacity:], self.objectives[self.capacity:]
        return True

    @classmethod
    def from_solutions(cls, inst: MilpInstance, xs, capacity: Optional[int] = None,
                       tol: float = 1e-6) -> "SolutionPool":
        xs = list(xs)
        pool = cls(capacity=capacity or max(1, len(xs)))
        for x in xs:
            if not check_feasibility(inst, x, tol):
                raise ValueError("pool members must be feasible")
            pool.add(x, evaluate_objective(inst, x))
        return pool

    @property
    def best(self):
        if not self.solutions:
            raise ValueError("empty solution pool")
        return self.solutions[0]

    def shifted(self, delta: float) -> "SolutionPool":
        return SolutionPool(self.capacity, [x.copy() for x in self.solutions],
                            [o + delta for o in self.objectives])

    def to_dict(self, name: str = "", status: str = "ok") -> dict:
        return {"instance": name, "status": status, "capacity": self.capacity,
                "solutions": [{"objective": o, "values": x.tolist()} for x, o in self]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SolutionPool":
        pool = cls(capacity=doc.get("capacity", max(1, len(doc["solutions"]))))
        for s in doc["solutions"]:
            pool.add(s["values"], s["objective"])
        return pool

    def save(self, path, name: str = "", status: str = "ok"):
        with open(path, "w") as fh:
            json.dump(self.to_dict(name, status), fh)

    @classmethod
    def load(cls, path) -> "SolutionPool":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def pool_targets(inst: MilpInstance, pool: SolutionPool) -> np.ndarray:
    """Energy-weighted probability that each binary variable equals 1.

    Weights are ``exp(-(objective - min objective))``; the shift cancels in
    the ratio and keeps large energies finite.
    """
    if len(pool) == 0:
        raise ValueError("empty solution pool")
    obj = np.asarray(pool.objectives, dtype=np.float64)
    w = np.exp(-(obj - obj.min()))
    X = np.vstack(pool.solutions)[:, inst.binary_indices]
    return (w @ (np.round(X) == 1)) / w.sum()


def augment(inst: MilpInstance, pool: SolutionPool, rng: np.random.Generator,
            n_out: int = 5, alpha_range=(0.3, 0.7)):
    """Reduced copies of ``inst`` with random subsets of binaries fixed to the pool's best.

    Each copy draws ``alpha ~ U(alpha_range)`` and fixes ``floor(alpha * n_binary)``
    distinct binaries, chosen uniformly among those not already fixed.
    Returns ``[(reduced_instance, PartialAssignment), ...]``.
    """
    best = np.round(pool.best)
    free = inst.binary_indices[~inst.fixed_mask[inst.binary_indices]]
    out = []
    for _ in range(n_out):
        lo, hi = alpha_range
        alpha = rng.uniform(lo, hi) if hi > lo else lo
        k = min(int(np.floor(alpha * inst.binary_indices.size)), free.size)
        idx = np.sort(rng.choice(free, size=k, replace=False))
        pa = PartialAssignment(idx, best[idx])
        out.append((fix_variables(inst, pa), pa))
    return out


def consistent_subpool(pool: SolutionPool, pa: PartialAssignment) -> SolutionPool:
    """Members of ``pool`` that agree with ``pa`` (the parent-pool fallback for augmentation)."""
    sub = SolutionPool(pool.capacity)
    for x, o in pool:
        if np.all(np.round(x[pa.indices]) == pa.values):
            sub.add(x, o)
    return sub


def oracle_predict(inst: MilpInstance, optimal, eps: float, conf: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Noisy copy of a known solution: right with probability ``1 - eps``, confidence ``conf``."""
    if not 0 <= eps < 0.5:
        raise ValueError("eps must lie in [0, 0.5)")
    if not 0.5 < conf <= 1:
        raise ValueError("conf must lie in (0.5, 1]")
    truth = np.round(np.asarray(optimal, dtype=np.float64)[inst.binary_indices])
    wrong = rng.random(truth.size) < eps
    shown = np.where(wrong, 1 - truth, truth)
    return np.where(shown == 1, conf, 1 - conf)


class OraclePredictor(BaseEstimator):
    """Controlled-accuracy predictor built around a known solution.

    The same ``seed`` is reused on every call, so each variable keeps one
    noisy marginal across the reduced instances of a run.
    """

    def __init__(self, optimal=None, eps=0.0, conf=1.0, seed=0):
        self.optimal = optimal
        self.eps = eps
        self.conf = conf
        self.seed = seed

    def fit(self, optimal, y=None):
        self.optimal = np.asarray(optimal, dtype=np.float64)
        return self

    def predict_proba(self, inst: MilpInstance) -> np.ndarray:
        if self.optimal is None:
            raise ValueError("OraclePredictor needs a reference solution")
        return oracle_predict(inst, self.optimal, self.eps, self.conf,
                              np.random.default_rng(self.seed))


class GnnPredictor(BaseEstimator):
    """Trainable bipartite GNN marginal predictor.

    Parameters
    ----------
    hidden_size : int
        Embedding width.
    n_layers : int
        Number of (variable->constraint, constraint->variable) layer pairs.
    learning_rate : float
        Adam step size.
    max_epochs, patience, eval_every : int
        Full-batch epochs, early-stopping patience counted in evaluations,
        and epochs between evaluations.
    n_augment : int
        Reduced copies generated per training instance (0 disables augmentation).
    augment_backend : BackendConfig, optional
        Re-collect a solution pool for each reduced copy with this backend.
        Without one, the parent pool is filtered to the members agreeing
        with the fixed values.
    fixed_flag : bool
        Append the optional is-fixed variable feature.
    seed : int
        Seeds initialization and augmentation.
    """

    def __init__(self, hidden_size=32, n_layers=4, learning_rate=1e-3, max_epochs=10_000,
                 patience=50, eval_every=1, n_augment=0, augment_backend=None,
                 fixed_flag=False, target_loss=None, seed=0):
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.eval_every = eval_every
        self.n_augment = n_augment
        self.augment_backend = augment_backend
        self.fixed_flag = fixed_flag
        self.target_loss = target_loss
        self.seed = seed

    def _dataset(self, instances, pools, rng=None):
        data = []
        for inst, pool in zip(instances, pools):
            data.append((featurize(inst, self.fixed_flag), pool_targets(inst, pool)))
            if rng is not None and self.n_augment:
                for reduced, pa in augment(inst, pool, rng, n_out=self.n_augment):
                    sub = self._reduced_pool(reduced, pool, pa)
                    data.append((featurize(reduced, self.fixed_flag),
                                 pool_targets(reduced, sub)))
        return data

    def _reduced_pool(self, reduced, pool, pa):
        if self.augment_backend is not None:
            from .experiment import collect_pool

            fresh, status = collect_pool(reduced, self.augment_backend, pool.capacity)
            if len(fresh):
                return fresh
        return consistent_subpool(pool, pa)

    def fit(self, instances: Sequence[MilpInstance], pools: Sequence[SolutionPool],
            val_instances=None, val_pools=None, log=None):
        if len(instances) == 0:
            raise ValueError("empty training set")
        if len(instances) != len(pools):
            raise ValueError("need one solution pool per instance")
        rng = np.random.default_rng(self.seed)
        train_set = self._dataset(instances, pools, rng)
        val_set = self._dataset(val_instances, val_pools) if val_instances else None
        result = gnn.train(train_set, val_set, hidden=self.hidden_size, n_layers=self.n_layers,
                           lr=self.learning_rate, max_epochs=self.max_epochs,
                           patience=self.patience, eval_every=self.eval_every, seed=self.seed,
                           target_loss=self.target_loss,
                           var_dim=N_VAR_FEATURES + int(self.fixed_flag), log=log)
        self.model_ = result.model
        self.train_result_ = result
        return self

    def predict_proba(self, inst: MilpInstance) -> np.ndarray:
        check_is_fitted(self, "model_")
        return gnn.forward(self.model_, featurize(inst, self.fixed_flag))

    def score(self, instances, pools) -> float:
        """Negative mean cross-entropy (higher is better)."""
        preds = [self.predict_proba(i) for i in instances]
        return -gnn.loss(preds, [pool_targets(i, p) for i, p in zip(instances, pools)])

    def save(self, path):
        check_is_fitted(self, "model_")
        self.model_.save(path)

    @classmethod
    def load(cls, path) -> "GnnPredictor":
        model = gnn.GnnModel.load(path)
        est = cls(hidden_size=model.hidden, n_layers=model.n_layers,
                  fixed_flag=model.var_dim > N_VAR_FEATURES)
        est.model_ = model
        return est
