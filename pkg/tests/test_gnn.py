import numpy as np
import pytest

from apollo_milp import gnn
from apollo_milp.features import featurize
from apollo_milp.generators import CaParams, gen_ca
from apollo_milp.gnn import GnnModel, ShapeError, TrainingDivergedError
from apollo_milp.milp import MilpInstance

from conftest import gradcheck_fixture, numeric_gradient


def relu(v):
    return v if v > 0 else 0.0


def scalar_forward(model, g):
    """Loop-by-loop forward pass, independent of the vectorized implementation."""
    P, h = model.params, model.hidden
    n, m = g.num_vars, g.num_cons
    emb = lambda x, W, b: [relu(sum(x[i] * W[i][k] for i in range(len(x))) + b[k])
                           for k in range(h)]
    Hv = [emb(g.var_features[j], P["var_w"], P["var_b"]) for j in range(n)]
    Hc = [emb(g.con_features[r], P["con_w"], P["con_b"]) for r in range(m)]
    Ee = [[g.edge_features[e][0] * P["edge_w"][0][k] + P["edge_b"][k] for k in range(h)]
          for e in range(g.num_edges)]

    def matvec(v, W):
        return [sum(v[i] * W[i][k] for i in range(h)) for k in range(h)]

    for l in range(model.n_layers):
        agg = [[0.0] * h for _ in range(m)]
        for e in range(g.num_edges):
            a = matvec(Hv[g.edge_var[e]], P[f"vc_msg_n{l}"])
            b = matvec(Ee[e], P[f"vc_msg_e{l}"])
            for k in range(h):
                agg[g.edge_con[e]][k] += a[k] + b[k]
        for r in range(m):
            s, t = matvec(Hc[r], P[f"vc_upd_s{l}"]), matvec(agg[r], P[f"vc_upd_a{l}"])
            Hc[r] = [Hc[r][k] + relu(s[k] + t[k] + P[f"vc_upd_b{l}"][k]) for k in range(h)]
        agg = [[0.0] * h for _ in range(n)]
        for e in range(g.num_edges):
            a = matvec(Hc[g.edge_con[e]], P[f"cv_msg_n{l}"])
            b = matvec(Ee[e], P[f"cv_msg_e{l}"])
            for k in range(h):
                agg[g.edge_var[e]][k] += a[k] + b[k]
        for j in range(n):
            s, t = matvec(Hv[j], P[f"cv_upd_s{l}"]), matvec(agg[j], P[f"cv_upd_a{l}"])
            Hv[j] = [Hv[j][k] + relu(s[k] + t[k] + P[f"cv_upd_b{l}"][k]) for k in range(h)]
    out = []
    for j in range(n):
        if g.binary_mask[j]:
            z = sum(Hv[j][k] * P["out_w"][k] for k in range(h)) + float(P["out_b"])
            out.append(1.0 / (1.0 + np.exp(-z)))
    return np.array(out)


def three_var():
    return featurize(MilpInstance.from_dense([1.0, -2.0, 0.5], [[1, 1, 0], [0, -1, 2]],
                                             ["<=", ">="], [1, 0], kinds="BBC"))


class TestForward:
    def test_zero_model_is_half(self):
        g = featurize(gen_ca(CaParams(items=10, bids=20, seed=0)))
        np.testing.assert_array_equal(gnn.forward(GnnModel.zeros(8, 2), g), 0.5)

    def test_matches_scalar_oracle(self):
        model = GnnModel.init(3, 2, seed=4, scale=2.0)
        for k in model.params:
            if k.endswith("b") or "_upd_b" in k:
                model.params[k] = np.asarray(np.random.default_rng(1).normal(
                    0, 0.3, np.shape(model.params[k])))
        g = three_var()
        np.testing.assert_allclose(gnn.forward(model, g), scalar_forward(model, g), rtol=1e-12)

    def test_only_binaries_returned(self):
        assert gnn.forward(GnnModel.init(4, 1), three_var()).shape == (2,)

    def test_permutation_equivariance(self):
        inst = gen_ca(CaParams(items=10, bids=20, seed=1))
        perm = np.random.default_rng(3).permutation(20)
        inv = np.argsort(perm)
        permuted = MilpInstance(c=inst.c[perm], rows=inst.rows, cols=inv[inst.cols],
                                vals=inst.vals, senses=inst.senses, rhs=inst.rhs,
                                lb=inst.lb[perm], ub=inst.ub[perm], kinds=inst.kinds[perm])
        model = GnnModel.init(8, 2, seed=0)
        a, b = featurize(inst), featurize(permuted)
        a.var_features[:, 6:] = 0
        b.var_features[:, 6:] = 0
        np.testing.assert_allclose(gnn.forward(model, b), gnn.forward(model, a)[perm],
                                   rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_strictly_inside_unit_interval(self, seed):
        p = gnn.forward(GnnModel.init(16, 4, seed=seed),
                        featurize(gen_ca(CaParams(seed=seed))))
        assert np.all((p > 0) & (p < 1))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gnn.forward(GnnModel.init(4, 1, var_dim=19), three_var())


class TestLoss:
    def test_perfect_prediction(self):
        assert gnn.loss(np.zeros(4), np.zeros(4)) == pytest.approx(0, abs=1e-6)
        assert gnn.loss(np.ones(4), np.ones(4)) == pytest.approx(0, abs=1e-6)

    def test_half_prediction(self):
        t = np.random.default_rng(0).random(7)
        assert gnn.loss(np.full(7, 0.5), t) == pytest.approx(7 * np.log(2))

    def test_gibbs(self):
        rng = np.random.default_rng(1)
        t = rng.random(50)
        ent = gnn.bce(t, t)
        for _ in range(20):
            assert gnn.bce(rng.random(50), t) >= ent

    def test_batch_average(self):
        a, b = np.array([0.3, 0.6]), np.array([0.9])
        ta, tb = np.array([1.0, 0.0]), np.array([1.0])
        assert gnn.loss([a, b], [ta, tb]) == pytest.approx(
            (gnn.bce(a, ta) + gnn.bce(b, tb)) / 2)


class TestBackward:
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        model, g, target = gradcheck_fixture(seed)
        _, grads = gnn.backward(model, g, target)
        num = numeric_gradient(model, g, target)
        for k in grads:
            np.testing.assert_allclose(grads[k], num[k], rtol=1e-4, atol=1e-7, err_msg=k)

    def test_stationary_point(self):
        g = three_var()
        _, grads = gnn.backward(GnnModel.zeros(4, 2), g, np.full(2, 0.5))
        for v in grads.values():
            np.testing.assert_array_equal(v, 0)

    def test_unreached_constraint_path(self):
        g = featurize(MilpInstance.from_dense([1.0, -1.0, 2.0]))
        _, grads = gnn.backward(GnnModel.init(4, 2, seed=1), g, np.array([1.0, 0.0, 1.0]))
        for k in ("con_w", "con_b", "edge_w", "edge_b"):
            np.testing.assert_array_equal(grads[k], 0)


class TestSerialization:
    def test_bit_identical(self, tmp_path):
        model = GnnModel.init(8, 3, seed=2)
        model.save(tmp_path / "m.apm")
        back = GnnModel.load(tmp_path / "m.apm")
        g = featurize(gen_ca(CaParams(items=10, bids=30, seed=0)))
        np.testing.assert_array_equal(gnn.forward(back, g), gnn.forward(model, g))

    def test_rejects_foreign_file(self):
        with pytest.raises(ValueError):
            GnnModel.from_json('{"format": "other", "version": 1}')

    def test_shape_check(self):
        model = GnnModel.init(4, 1)
        model.params["var_w"] = np.zeros((3, 4))
        with pytest.raises(ShapeError):
            GnnModel.from_json(model.to_json())


class TestTrain:
    def dataset(self):
        g = featurize(gen_ca(CaParams(items=8, bids=12, seed=0)))
        return [(g, (np.arange(12) % 3 == 0).astype(float))]

    def test_overfit_single_instance(self):
        res = gnn.train(self.dataset(), hidden=16, n_layers=2, lr=1e-2, max_epochs=1500,
                        target_loss=0.05, seed=0)
        assert res.best_val_loss < 0.05

    def test_deterministic(self):
        a = gnn.train(self.dataset(), hidden=8, n_layers=2, max_epochs=30, seed=3)
        b = gnn.train(self.dataset(), hidden=8, n_layers=2, max_epochs=30, seed=3)
        assert a.best_val_loss == b.best_val_loss
        assert a.history == b.history

    def test_best_checkpoint(self):
        data = self.dataset()
        val = [(featurize(gen_ca(CaParams(items=8, bids=12, seed=5))), np.full(12, 0.2))]
        res = gnn.train(data, val, hidden=8, n_layers=2, lr=5e-2, max_epochs=200, patience=5)
        assert res.best_val_loss <= res.initial_val_loss
        assert gnn.batch_loss(res.model, val) == pytest.approx(res.best_val_loss)

    def test_divergence_detected(self):
        model = GnnModel.init(4, 1)
        model.params["out_b"] = np.asarray(np.nan)
        with pytest.raises(TrainingDivergedError):
            gnn.train(self.dataset(), init_model=model, max_epochs=3)
