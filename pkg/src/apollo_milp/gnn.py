"""Bipartite message-passing network with hand-written reverse-mode gradients.

Architecture (embedding size ``h``)::

    Hv = relu(Xv @ var_w + var_b)          Hc = relu(Xc @ con_w + con_b)
    Ee = Xe @ edge_w + edge_b
    for each layer l:
        # variables -> constraints
        msg = Hv[edge_var] @ vc_msg_n[l] + Ee @ vc_msg_e[l]
        Hc  = Hc + relu(Hc @ vc_upd_s[l] + scatter_sum(msg -> con) @ vc_upd_a[l] + vc_upd_b[l])
        # constraints -> variables
        msg = Hc[edge_con] @ cv_msg_n[l] + Ee @ cv_msg_e[l]
        Hv  = Hv + relu(Hv @ cv_upd_s[l] + scatter_sum(msg -> var) @ cv_upd_a[l] + cv_upd_b[l])
    prob = sigmoid(Hv @ out_w + out_b)  restricted to binary variables
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .features import N_CON_FEATURES, N_VAR_FEATURES, BipartiteGraph

PROB_CLAMP = 1e-7
FORMAT_TAG = "apollo-milp-gnn"
FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _layer_names(l):
    names = []
    for d in ("vc", "cv"):
        names += [f"{d}_msg_n{l}", f"{d}_msg_e{l}", f"{d}_upd_s{l}", f"{d}_upd_a{l}",
                  f"{d}_upd_b{l}"]
    return names


def param_shapes(hidden: int, n_layers: int, var_dim: int = N_VAR_FEATURES) -> dict:
    h = hidden
    shapes = {"var_w": (var_dim, h), "var_b": (h,), "con_w": (N_CON_FEATURES, h),
              "con_b": (h,), "edge_w": (1, h), "edge_b": (h,)}
    for l in range(n_layers):
        for d in ("vc", "cv"):
            shapes[f"{d}_msg_n{l}"] = (h, h)
            shapes[f"{d}_msg_e{l}"] = (h, h)
            shapes[f"{d}_upd_s{l}"] = (h, h)
            shapes[f"{d}_upd_a{l}"] = (h, h)
            shapes[f"{d}_upd_b{l}"] = (h,)
    shapes["out_w"] = (h,)
    shapes["out_b"] = ()
    return shapes


@dataclass
class GnnModel:
    """Parameter container; ``params`` maps names to float64 arrays."""

    hidden: int = 32
    n_layers: int = 4
    var_dim: int = N_VAR_FEATURES
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, hidden=32, n_layers=4, seed=0, var_dim=N_VAR_FEATURES, scale=1.0):
        """Glorot-uniform weights (message/update blocks damped by ``1/h``), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(hidden, n_layers, var_dim).items():
            if len(shape) == 2:
                limit = scale * np.sqrt(6.0 / (shape[0] + shape[1]))
                if "_msg_" in name or "_upd_" in name:
                    limit /= np.sqrt(hidden)
                params[name] = rng.uniform(-limit, limit, size=shape)
            elif name == "out_w":
                limit = scale * np.sqrt(6.0 / (hidden + 1))
                params[name] = rng.uniform(-limit, limit, size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(hidden, n_layers, var_dim, params)

    @classmethod
    def zeros(cls, hidden=32, n_layers=4, var_dim=N_VAR_FEATURES):
        return cls(hidden, n_layers, var_dim,
                   {k: np.zeros(s) for k, s in param_shapes(hidden, n_layers, var_dim).items()})

    def copy(self) -> "GnnModel":
        return GnnModel(self.hidden, self.n_layers, self.var_dim,
                        {k: v.copy() for k, v in self.params.items()})

    def check(self):
        expected = param_shapes(self.hidden, self.n_layers, self.var_dim)
        if set(expected) != set(self.params):
            raise ShapeError("parameter names do not match the architecture")
        for k, s in expected.items():
            if np.shape(self.params[k]) != s:
                raise ShapeError(f"{k} has shape {np.shape(self.params[k])}, expected {s}")

    # serialization -----------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({
            "format": FORMAT_TAG, "version": FORMAT_VERSION, "hidden": self.hidden,
            "layers": self.n_layers, "var_dim": self.var_dim,
            "params": {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
                       for k, v in self.params.items()},
        })

    @classmethod
    def from_json(cls, text: str) -> "GnnModel":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_TAG or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not an apollo-milp model file")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        model = cls(doc["hidden"], doc["layers"], doc.get("var_dim", N_VAR_FEATURES), params)
        model.check()
        return model

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "GnnModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _incidence(index, size, n_edges):
    """Sparse (size x E) matrix summing edge rows into nodes."""
    return sp.csr_matrix((np.ones(n_edges), (index, np.arange(n_edges))),
                         shape=(size, n_edges))


def _check_graph(model: GnnModel, g: BipartiteGraph):
    if g.var_features.shape[1] != model.var_dim:
        raise ShapeError(f"variable features have {g.var_features.shape[1]} columns, "
                         f"model expects {model.var_dim}")
    if g.num_cons and g.con_features.shape[1] != N_CON_FEATURES:
        raise ShapeError("constraint features must have 4 columns")


def forward(model: GnnModel, g: BipartiteGraph, return_cache: bool = False):
    """Marginal probabilities for the binary variables of ``g``."""
    _check_graph(model, g)
    P = model.params
    n, m, E = g.num_vars, g.num_cons, g.num_edges
    Xc = g.con_features if m else np.zeros((0, N_CON_FEATURES))
    S_con = _incidence(g.edge_con, m, E)
    S_var = _incidence(g.edge_var, n, E)

    Zv = g.var_features @ P["var_w"] + P["var_b"]
    Zc = Xc @ P["con_w"] + P["con_b"]
    Hv, Hc = np.maximum(Zv, 0), np.maximum(Zc, 0)
    Ee = g.edge_features @ P["edge_w"] + P["edge_b"]
    layers = []
    for l in range(model.n_layers):
        rec = {"Hv_in": Hv, "Hc_in": Hc}
        msg = Hv[g.edge_var] @ P[f"vc_msg_n{l}"] + Ee @ P[f"vc_msg_e{l}"]
        agg = S_con @ msg
        pre = Hc @ P[f"vc_upd_s{l}"] + agg @ P[f"vc_upd_a{l}"] + P[f"vc_upd_b{l}"]
        Hc = Hc + np.maximum(pre, 0)
        rec.update(agg_c=agg, pre_c=pre, Hc_mid=Hc)
        msg = Hc[g.edge_con] @ P[f"cv_msg_n{l}"] + Ee @ P[f"cv_msg_e{l}"]
        agg = S_var @ msg
        pre = Hv @ P[f"cv_upd_s{l}"] + agg @ P[f"cv_upd_a{l}"] + P[f"cv_upd_b{l}"]
        Hv = Hv + np.maximum(pre, 0)
        rec.update(agg_v=agg, pre_v=pre)
        layers.append(rec)
    z = Hv @ P["out_w"] + P["out_b"]
    prob = sigmoid(z)[g.binary_mask]
    if not return_cache:
        return prob
    cache = dict(Zv=Zv, Zc=Zc, Ee=Ee, layers=layers, Hv=Hv, z=z, S_con=S_con, S_var=S_var,
                 Xc=Xc)
    return prob, cache


def bce(pred, target) -> float:
    """Summed binary cross-entropy with predictions clamped to ``[1e-7, 1 - 1e-7]``."""
    pred = np.clip(np.asarray(pred, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("prediction and target lengths differ")
    return float(-np.sum(target * np.log(pred) + (1 - target) * np.log(1 - pred)))


def loss(preds, targets) -> float:
    """Cross-entropy summed over variables and averaged over the batch of instances."""
    if isinstance(preds, np.ndarray) and preds.ndim == 1:
        preds, targets = [preds], [targets]
    return sum(bce(p, t) for p, t in zip(preds, targets)) / len(preds)


def backward(model: GnnModel, g: BipartiteGraph, target, scale: float = 1.0):
    """Loss and gradients of ``scale * bce(forward(model, g), target)``."""
    P = model.params
    prob, cache = forward(model, g, return_cache=True)
    target = np.asarray(target, dtype=np.float64)
    value = scale * bce(prob, target)

    inside = (prob > PROB_CLAMP) & (prob < 1 - PROB_CLAMP)
    dz = np.zeros(g.num_vars)
    dz[g.binary_mask] = np.where(inside, prob - target, 0.0) * scale

    grads = {k: np.zeros_like(v) for k, v in P.items()}
    Hv = cache["Hv"]
    grads["out_w"] = Hv.T @ dz
    grads["out_b"] = np.asarray(dz.sum())
    dHv = np.outer(dz, P["out_w"])
    dHc = np.zeros((g.num_cons, model.hidden))
    dEe = np.zeros((g.num_edges, model.hidden))
    S_con, S_var, Ee = cache["S_con"], cache["S_var"], cache["Ee"]

    for l in reversed(range(model.n_layers)):
        rec = cache["layers"][l]
        Hv_in, Hc_mid = rec["Hv_in"], rec["Hc_mid"]
        # constraints -> variables
        dpre = dHv * (rec["pre_v"] > 0)
        grads[f"cv_upd_s{l}"] += Hv_in.T @ dpre
        grads[f"cv_upd_a{l}"] += rec["agg_v"].T @ dpre
        grads[f"cv_upd_b{l}"] += dpre.sum(axis=0)
        dHv = dHv + dpre @ P[f"cv_upd_s{l}"].T
        dmsg = S_var.T @ (dpre @ P[f"cv_upd_a{l}"].T)
        grads[f"cv_msg_n{l}"] += Hc_mid[g.edge_con].T @ dmsg
        grads[f"cv_msg_e{l}"] += Ee.T @ dmsg
        dEe += dmsg @ P[f"cv_msg_e{l}"].T
        dHc = dHc + S_con @ (dmsg @ P[f"cv_msg_n{l}"].T)
        # variables -> constraints
        Hc_in = rec["Hc_in"]
        dpre = dHc * (rec["pre_c"] > 0)
        grads[f"vc_upd_s{l}"] += Hc_in.T @ dpre
        grads[f"vc_upd_a{l}"] += rec["agg_c"].T @ dpre
        grads[f"vc_upd_b{l}"] += dpre.sum(axis=0)
        dHc = dHc + dpre @ P[f"vc_upd_s{l}"].T
        dmsg = S_con.T @ (dpre @ P[f"vc_upd_a{l}"].T)
        grads[f"vc_msg_n{l}"] += Hv_in[g.edge_var].T @ dmsg
        grads[f"vc_msg_e{l}"] += Ee.T @ dmsg
        dEe += dmsg @ P[f"vc_msg_e{l}"].T
        dHv = dHv + S_var @ (dmsg @ P[f"vc_msg_n{l}"].T)

    dZv = dHv * (cache["Zv"] > 0)
    grads["var_w"] = g.var_features.T @ dZv
    grads["var_b"] = dZv.sum(axis=0)
    dZc = dHc * (cache["Zc"] > 0)
    grads["con_w"] = cache["Xc"].T @ dZc
    grads["con_b"] = dZc.sum(axis=0)
    grads["edge_w"] = g.edge_features.T @ dEe
    grads["edge_b"] = dEe.sum(axis=0)
    return value, grads


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def batch_loss_and_grad(model: GnnModel, batch):
    """Mean loss and gradient over ``[(graph, target), ...]``."""
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in model.params.items()}
    scale = 1.0 / len(batch)
    for g, t in batch:
        value, grads = backward(model, g, t, scale=scale)
        total += value
        for k in acc:
            acc[k] += grads[k]
    return total, acc


def batch_loss(model: GnnModel, batch) -> float:
    return loss([forward(model, g) for g, _ in batch], [t for _, t in batch])


@dataclass
class TrainResult:
    model: GnnModel
    best_val_loss: float
    initial_val_loss: float
    history: list
    epochs: int


def train(train_set, val_set=None, hidden=32, n_layers=4, lr=1e-3, max_epochs=10_000,
          patience=50, eval_every=1, seed=0, init_model: Optional[GnnModel] = None,
          target_loss: Optional[float] = None, var_dim=N_VAR_FEATURES,
          log=None) -> TrainResult:
    """Full-batch Adam with early stopping on validation loss.

    ``train_set`` and ``val_set`` are lists of ``(BipartiteGraph, target)``;
    without a validation set the training loss is monitored instead.
    Returns the best-validation model.
    """
    if not train_set:
        raise ValueError("empty training set")
    model = init_model.copy() if init_model is not None else GnnModel.init(
        hidden, n_layers, seed=seed, var_dim=var_dim)
    monitor = val_set if val_set else train_set
    adam = AdamState(lr=lr)
    best = batch_loss(model, monitor)
    initial = best
    best_model = model.copy()
    stale = 0
    history = []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        value, grads = batch_loss_and_grad(model, train_set)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}")
        adam.step(model.params, grads)
        if epoch % eval_every:
            continue
        current = batch_loss(model, monitor)
        history.append((epoch, value, current))
        if log is not None:
            log(epoch, value, current)
        if current < best:
            best, best_model, stale = current, model.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
        if target_loss is not None and best < target_loss:
            break
    return TrainResult(best_model, best, initial, history, epoch)
