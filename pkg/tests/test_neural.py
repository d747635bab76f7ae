import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachgrasp.exceptions import EmptyDataset, NonFiniteGradient, ShapeMismatch
from reachgrasp.neural import (Adam, Architecture, CompositeLoss, Head, SequenceNet, TrainConfig, adam_step,
                               dropout_apply, fit_sequences, grad_check, load_checkpoint, lstm_forward,
                               mean_step_displacement, predict_sequences, save_checkpoint, temporal_smoothness)
from reachgrasp.neural.train import length_batches
from reachgrasp.posture import PostureLSTMRegressor
from reachgrasp.reach import ReachLSTMRegressor

MSE4 = CompositeLoss((Head("y", 0, 4, "mse"),))


def _small_net(seed=1, trunk=(), dropout=0.0):
    return SequenceNet(Architecture(input_size=3, hidden_size=8, output_size=4, trunk=trunk, dropout=dropout),
                       seed=seed)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestLSTMForward:
    def test_zero_weights_zero_output(self):
        W, U, b = np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8)
        hs, _ = lstm_forward(W, U, b, np.zeros((2, 5, 3)))
        np.testing.assert_array_equal(hs, 0.0)

    def test_single_step_by_hand(self):
        # hidden size 2; gate rows ordered input, forget, cell, output
        W = np.array([[0.1, -0.2], [0.3, 0.0], [0.5, 0.4], [-0.3, 0.2],
                      [0.2, 0.2], [-0.1, 0.6], [0.0, -0.5], [0.7, 0.1]])
        U = np.full((8, 2), 0.25)
        b = np.array([0.0, 0.1, 1.0, 1.0, -0.2, 0.3, 0.05, -0.05])
        x = np.array([0.6, -1.1])
        a = W @ x + b  # h0 = 0, so U does not contribute
        i = _sig(a[0:2])
        g = np.tanh(a[4:6])
        o = _sig(a[6:8])
        c = i * g  # c0 = 0
        h = o * np.tanh(c)
        hs, _ = lstm_forward(W, U, b, x[None, None, :])
        np.testing.assert_allclose(hs[0, 0], h, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 100.0))
    def test_hidden_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        W, U, b = rng.normal(size=(12, 2)) * scale, rng.normal(size=(12, 3)) * scale, rng.normal(size=12)
        hs, _ = lstm_forward(W, U, b, rng.normal(size=(3, 7, 2)) * scale)
        assert np.all(np.abs(hs) <= 1.0)

    def test_shape_check(self):
        with pytest.raises(ShapeMismatch):
            lstm_forward(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8), np.zeros((5, 3)))


class TestGradients:
    def test_zero_loss_zero_gradient(self, rng):
        net = _small_net(trunk=(5,))
        X = rng.normal(size=(3, 6, 3))
        out, cache = net.forward(X)
        value, dY = MSE4.value_and_grad(out, out.copy())
        assert value == 0.0
        for g in net.backward(cache, dY).values():
            np.testing.assert_array_equal(g, 0.0)

    def test_weight_linearity(self, rng):
        net = _small_net(trunk=(5,))
        X, T = rng.normal(size=(3, 6, 3)), rng.normal(size=(3, 6, 4))
        out, cache = net.forward(X)
        base = CompositeLoss((Head("a", 0, 2, "mse", 1.0), Head("b", 2, 4, "mae", 1.0)))
        double = CompositeLoss((Head("a", 0, 2, "mse", 2.0), Head("b", 2, 4, "mae", 1.0)))
        only_b = CompositeLoss((Head("b", 2, 4, "mae", 1.0),))
        g1 = net.backward(cache, base.value_and_grad(out, T)[1])
        g2 = net.backward(cache, double.value_and_grad(out, T)[1])
        gb = net.backward(cache, only_b.value_and_grad(out, T)[1])
        for k in g1:
            # (g2 - gb) is twice the "a" contribution (g1 - gb)
            np.testing.assert_allclose(g2[k] - gb[k], 2.0 * (g1[k] - gb[k]), atol=1e-14)

    def test_mse_small_model(self, rng):
        net = _small_net(seed=1)
        X, T = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 4))
        assert grad_check(net, X, T, MSE4) <= 1e-4

    def test_mae_small_model(self, rng):
        net = _small_net(seed=1)
        X = rng.normal(size=(2, 5, 3))
        out = net.predict(X)
        T = out + 0.1 * np.where(rng.random(out.shape) < 0.5, -1.0, 1.0)
        assert grad_check(net, X, T, CompositeLoss((Head("y", 0, 4, "mae"),))) <= 1e-4

    def test_smoothness_small_model(self, rng):
        net = _small_net(seed=1)
        X, T = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 4))
        assert grad_check(net, X, T, CompositeLoss((Head("y", 0, 4, "mse"),), lambda_smooth=0.5)) <= 1e-4

    def test_dropout_active(self, rng):
        net = _small_net(seed=2, trunk=(6,), dropout=0.3)
        X, T = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 4))
        assert grad_check(net, X, T, MSE4, train=True, seed=3) <= 1e-4


def _reach_case(use_mjt, rng):
    est = ReachLSTMRegressor(hidden_size=8, use_mjt=use_mjt)
    net = SequenceNet(est.architecture(), seed=0)
    X = rng.normal(size=(3, 6, 4))
    aux = rng.normal(size=(3, 5)) if use_mjt else None
    out = net.predict(X, aux)
    T = rng.normal(size=out.shape)
    T[..., 3] = out[..., 3] + 0.1 * np.sign(rng.normal(size=out.shape[:2]))
    return net, X, T, est.loss(), aux


@pytest.mark.parametrize("use_mjt", [False, True])
def test_reach_architectures(use_mjt, rng):
    net, X, T, loss, aux = _reach_case(use_mjt, rng)
    assert grad_check(net, X, T, loss, aux=aux, train=True, seed=0) <= 1e-4


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_posture_architectures(lam):
    rng = np.random.default_rng(7)
    est = PostureLSTMRegressor(hidden_size=8, lambda_smooth=lam)
    net = SequenceNet(est.architecture(), seed=0)
    X, T = rng.normal(size=(2, 5, 16)), rng.normal(size=(2, 5, 15))
    assert grad_check(net, X, T, est.loss(), train=True, seed=0) <= 1e-4


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = Adam(p, lr=0.1)
        adam_step(opt, p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_is_lr_sign(self):
        p = {"w": np.zeros(4)}
        g = np.array([3.0, -0.01, 1e-3, -50.0])
        adam_step(Adam(p, lr=0.01), p, {"w": g})
        np.testing.assert_allclose(p["w"], -0.01 * np.sign(g), rtol=1e-4)

    def test_descends_quadratic(self):
        p = {"w": np.array([2.0])}
        opt = Adam(p, lr=0.1)
        losses = [float(p["w"][0] ** 2)]
        for _ in range(2):
            adam_step(opt, p, {"w": 2.0 * p["w"]})
            losses.append(float(p["w"][0] ** 2))
        assert losses[0] > losses[1] > losses[2]

    def test_shape_mismatch(self):
        p = {"w": np.zeros(3)}
        with pytest.raises(ValueError):
            Adam(p).step(p, {"w": np.zeros(2)})


class TestSmoothness:
    def test_constant(self):
        assert temporal_smoothness(np.ones((6, 3))) == 0.0

    def test_example(self):
        assert temporal_smoothness([0.0, 1.0, 3.0]) == 5.0

    def test_single_step(self):
        assert temporal_smoothness(np.zeros((1, 4))) == 0.0
        assert mean_step_displacement(np.zeros((1, 4))) == 0.0

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_translation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=(7, 3))
        c = rng.normal(size=3) * 100
        assert temporal_smoothness(p + c) == pytest.approx(temporal_smoothness(p), rel=1e-9)

    def test_loss_term_matches(self, rng):
        Y = rng.normal(size=(2, 5, 3))
        loss = CompositeLoss((Head("y", 0, 3, "mse"),), lambda_smooth=0.7)
        expected = np.mean((Y - 1.0) ** 2) + 0.7 * (temporal_smoothness(Y[0]) + temporal_smoothness(Y[1])) / 2
        assert loss(Y, np.ones_like(Y)) == pytest.approx(expected, rel=1e-12)
        assert loss.terms(Y, np.ones_like(Y))["smooth"] == pytest.approx(
            (temporal_smoothness(Y[0]) + temporal_smoothness(Y[1])) / 2, rel=1e-12)


class TestDropout:
    def test_eval_identity(self, rng):
        x = rng.normal(size=(4, 5))
        out, mask = dropout_apply(x, 0.5, "eval", rng)
        assert out is x and mask is None

    def test_rate_zero(self, rng):
        x = rng.normal(size=10)
        assert dropout_apply(x, 0.0, "train", rng)[0] is x

    def test_statistics(self):
        rng = np.random.default_rng(0)
        x = np.ones(100_000)
        out, mask = dropout_apply(x, 0.2, "train", rng)
        assert abs(np.mean(mask > 0) - 0.8) <= 0.01
        assert abs(out.mean() - 1.0) <= 0.01

    def test_seeded(self):
        x = np.ones(50)
        a = dropout_apply(x, 0.5, "train", np.random.default_rng(4))[0]
        b = dropout_apply(x, 0.5, "train", np.random.default_rng(4))[0]
        np.testing.assert_array_equal(a, b)

    def test_bad_args(self, rng):
        with pytest.raises(ValueError):
            dropout_apply(np.ones(3), 1.0, "train", rng)
        with pytest.raises(ValueError):
            dropout_apply(np.ones(3), 0.5, "test", rng)


class TestTraining:
    def _data(self, rng, n=12):
        X = [rng.normal(size=(int(rng.integers(3, 6)), 3)) for _ in range(n)]
        T = [np.tile([0.5, -0.25, 0.1, 0.9], (len(x), 1)) for x in X]
        return X, T

    def test_memorizes_constant(self, rng):
        X, T = self._data(rng)
        net = _small_net(seed=0, trunk=(8,))
        hist = fit_sequences(net, X, T, MSE4, TrainConfig(epochs=600, batch_size=4, dropout_rate=0.0,
                                                           learning_rate=0.005))
        assert hist[-1] <= 1e-4 < hist[0]
        for out in predict_sequences(net, X):
            np.testing.assert_allclose(out, T[0][:len(out)], atol=1e-2)

    def test_deterministic(self, rng):
        X, T = self._data(rng)
        cfg = TrainConfig(epochs=3, batch_size=4, dropout_rate=0.2, seed=5)
        nets = [_small_net(seed=0, trunk=(8,), dropout=0.2) for _ in range(2)]
        h = [fit_sequences(n, X, T, MSE4, cfg) for n in nets]
        assert h[0] == h[1]
        assert nets[0].digest() == nets[1].digest()

    def test_non_finite_aborts(self, rng):
        X, T = self._data(rng)
        T[3] = T[3] * np.nan
        with pytest.raises(NonFiniteGradient, match="epoch 0"):
            fit_sequences(_small_net(), X, T, MSE4, TrainConfig(epochs=2, batch_size=100))

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            fit_sequences(_small_net(), [], [], MSE4, TrainConfig())

    def test_length_batches_exact(self):
        lengths = [3, 5, 3, 3, 5, 7]
        batches = length_batches(lengths, 2, np.random.default_rng(0))
        assert sorted(int(i) for b in batches for i in b) == list(range(6))
        for b in batches:
            assert len({lengths[i] for i in b}) == 1 and len(b) <= 2

    def test_predict_order(self, rng):
        X, _ = self._data(rng)
        net = _small_net(seed=3)
        outs = predict_sequences(net, X, batch_size=3)
        for x, o in zip(X, outs):
            np.testing.assert_allclose(o, net.predict(x[None])[0], atol=1e-14)

    @pytest.mark.parametrize("kwargs", [{"dropout_rate": 1.0}, {"loss_weights": {"a": 0.0}},
                                        {"lambda_smooth": -1.0}, {"batch_size": 0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_checkpoint_round_trip(tmp_path, rng):
    arch = Architecture(input_size=4, hidden_size=8, output_size=4, trunk=(6,), branches=((0, 3, 5), (3, 5, 2)))
    net = SequenceNet(arch, seed=9)
    save_checkpoint(tmp_path / "m.json", net, {"lr": 0.001}, 9, {"note": "x"})
    ck = load_checkpoint(tmp_path / "m.json")
    assert ck.net.arch == arch and ck.seed == 9 and ck.extra == {"note": "x"}
    assert ck.net.digest() == net.digest()
    X, aux = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 5))
    np.testing.assert_array_equal(ck.net.predict(X, aux), net.predict(X, aux))


def test_aux_shape_checked(rng):
    arch = Architecture(input_size=4, hidden_size=8, output_size=4, branches=((0, 3, 5),))
    with pytest.raises(ShapeMismatch):
        SequenceNet(arch).predict(rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4)))


def test_set_flat_params(rng):
    net = _small_net()
    flat = rng.normal(size=net.n_params)
    net.set_flat_params(flat)
    np.testing.assert_array_equal(net.flat_params(), flat)
    with pytest.raises(ShapeMismatch):
        net.set_flat_params(flat[:-1])
