import importlib.util
import itertools

import numpy as np
import pytest

from apollo_milp.milp import MilpInstance

HAVE_HIGHS = importlib.util.find_spec("highspy") is not None
needs_highs = pytest.mark.skipif(not HAVE_HIGHS, reason="highspy not installed")


def all_binary_points(n):
    """Every 0/1 vector of length ``n`` as rows, via itertools (independent of the backend)."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def feasible_points(inst: MilpInstance, tol=1e-9):
    """Brute-force feasible set of a pure-binary instance, checked with dense arithmetic."""
    pts = all_binary_points(inst.num_vars)
    A = inst.A.toarray()
    act = pts @ A.T
    ok = np.all((pts >= inst.lb - tol) & (pts <= inst.ub + tol), axis=1)
    for r, s in enumerate(inst.senses):
        if s == "L":
            ok &= act[:, r] <= inst.rhs[r] + tol
        elif s == "G":
            ok &= act[:, r] >= inst.rhs[r] - tol
        else:
            ok &= np.abs(act[:, r] - inst.rhs[r]) <= tol
    return pts[ok]


def brute_optimum(inst: MilpInstance):
    pts = feasible_points(inst)
    if pts.size == 0:
        return None, None
    obj = pts @ inst.c
    k = int(np.argmin(obj))
    return float(obj[k]), pts[k]


def random_binary_instance(rng, n=10, m=6, density=0.4, senses="LGE"):
    """Random pure-binary instance; rows built around a hidden point so it stays feasible."""
    A = np.round(rng.uniform(-5, 5, size=(m, n)) * (rng.random((m, n)) < density), 1)
    x0 = (rng.random(n) < 0.5).astype(float)
    act = A @ x0
    sense = rng.choice(list(senses), size=m)
    rhs = np.where(sense == "L", act + rng.integers(0, 3, m),
                   np.where(sense == "G", act - rng.integers(0, 3, m), act))
    c = np.round(rng.uniform(-10, 10, size=n), 2)
    return MilpInstance.from_dense(c, A, list(sense), rhs, name="rand"), x0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def example_b():
    """Five binaries with objective -1 each and no constraints."""
    return MilpInstance.from_dense(-np.ones(5), name="example_b")


def numeric_gradient(model, g, target, step=1e-5):
    """Central finite differences of the summed cross-entropy for every parameter entry."""
    from apollo_milp import gnn

    out = {}
    for name, arr in model.params.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = gnn.bce(gnn.forward(model, g), target)
            flat[k] = orig - step
            down = gnn.bce(gnn.forward(model, g), target)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * step)
        out[name] = grad
    return out


def gradcheck_fixture(seed, hidden=4, n_layers=2):
    """Random small instance, model and soft targets for gradient checks."""
    from apollo_milp.features import featurize
    from apollo_milp.gnn import GnnModel

    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(3, 6)), int(rng.integers(1, 4))
    A = np.round(rng.uniform(-3, 3, (m, n)) * (rng.random((m, n)) < 0.7), 2)
    inst = MilpInstance.from_dense(np.round(rng.uniform(-5, 5, n), 2), A,
                                   list(rng.choice(list("LGE"), m)),
                                   np.round(rng.uniform(-2, 4, m), 2))
    model = GnnModel.init(hidden, n_layers, seed=seed)
    for k, v in model.params.items():
        if k.endswith("_b") or "_upd_b" in k:
            model.params[k] = np.asarray(rng.normal(0, 0.1, np.shape(v)))
    target = rng.random(n)
    return model, featurize(inst), target
