import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigident.nn import (
    Adam, Conv2D, Dense, Dropout, Network, ReLU, Reshape, RMSProp, Tensor, TrainConfig,
    TrainingDiverged, add_input_noise, dropout, grad_check, mse_loss, numeric_grad,
    read_checkpoint, relative_error, softmax_xent, train,
)

F64 = np.float64


def rng(seed=0):
    return np.random.default_rng(seed)


class TestForward:
    def test_identity_conv(self):
        net = Network([Conv2D(1, (1, 1))], (1, 2, 8), dtype=F64)
        net.layers[0].W.values[...] = 1.0
        x = rng().standard_normal((3, 1, 2, 8))
        np.testing.assert_array_equal(net.forward(x), x)

    def test_dense_zero_weights(self):
        net = Network([Dense(3)], (4,), dtype=F64)
        net.layers[0].W.values[...] = 0.0
        net.layers[0].b.values[...] = [1.0, -2.0, 0.5]
        out = net.forward(rng().standard_normal((5, 4)))
        np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (5, 1)))

    def test_relu(self):
        net = Network([ReLU()], (3,), dtype=F64)
        np.testing.assert_array_equal(net.forward(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])

    def test_conv_matches_loop_oracle(self):
        layer = Conv2D(3, (2, 3), "same")
        net = Network([layer], (2, 4, 6), seed=3, dtype=F64)
        layer.b.values[...] = rng(1).standard_normal(3)
        x = rng(2).standard_normal((2, 2, 4, 6))
        xp = np.pad(x, ((0, 0), (0, 0), (0, 1), (1, 1)))
        ref = np.zeros((2, 3, 4, 6))
        for n in range(2):
            for f in range(3):
                for i in range(4):
                    for j in range(6):
                        ref[n, f, i, j] = np.sum(xp[n, :, i : i + 2, j : j + 3] * layer.W.values[f]) + layer.b.values[f]
        np.testing.assert_allclose(net.forward(x), ref, atol=1e-12)

    def test_shape_mismatch(self):
        net = Network([Dense(2)], (4,))
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 5)))

    def test_shape_algebra(self):
        layers = [Conv2D(4, (1, 7), "same", "relu"), Dropout(0.2), Conv2D(3, (2, 5), "valid"),
                  Dense(7), Dense(3 * 10), Reshape((3, 1, 10)), Conv2D(2, (1, 3), "same")]
        net = Network(layers, (1, 2, 32), dtype=F64)
        assert net.shapes == [(4, 2, 32), (4, 2, 32), (3, 1, 28), (7,), (30,), (3, 1, 10), (2, 1, 10)]
        x = rng().standard_normal((2, 1, 2, 32))
        for layer, shape in zip(net.layers, net.shapes):
            x = layer.forward(x, train=True)
            assert x.shape[1:] == shape

    def test_kernel_too_large(self):
        with pytest.raises(ValueError):
            Network([Conv2D(1, (3, 3))], (1, 2, 8))

    @pytest.mark.parametrize("bad", [lambda: Conv2D(0, 1), lambda: Conv2D(1, 1, "full"), lambda: Dense(0),
                                     lambda: Dropout(1.0), lambda: Dense(2, "tanh")])
    def test_layer_validation(self, bad):
        with pytest.raises(ValueError):
            bad()


class TestBackward:
    def test_requires_forward(self):
        net = Network([Dense(2)], (3,))
        with pytest.raises(RuntimeError):
            net.backward(np.zeros((1, 2)))

    def test_eval_forward_does_not_arm_backward(self):
        net = Network([Dense(2)], (3,))
        net.forward(np.zeros((1, 3)), train=False)
        with pytest.raises(RuntimeError):
            net.backward(np.zeros((1, 2)))

    def test_zero_output_grad(self):
        net = Network([Conv2D(2, (1, 3), "same", "relu"), Dense(4)], (1, 2, 8), dtype=F64)
        net.forward(rng().standard_normal((3, 1, 2, 8)), train=True)
        net.backward(np.zeros((3, 4)))
        assert all(np.all(p.grad == 0) for p in net.params)

    def test_duplicate_example_doubles_grad(self):
        net = Network([Conv2D(2, (2, 3), "valid", "relu"), Dense(3)], (1, 2, 8), seed=4, dtype=F64)
        x = rng(1).standard_normal((1, 1, 2, 8))
        g = rng(2).standard_normal((1, 3))
        net.forward(x, train=True)
        net.backward(g)
        single = [p.grad.copy() for p in net.params]
        net.forward(np.concatenate([x, x]), train=True)
        net.backward(np.concatenate([g, g]))
        for s, p in zip(single, net.params):
            np.testing.assert_allclose(p.grad, 2 * s, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("layers,shape", [
        ([Conv2D(3, (1, 3), "same", "relu")], (2, 2, 6)),
        ([Conv2D(2, (2, 3), "valid")], (3, 2, 7)),
        ([Dense(4, "relu")], (5,)),
        ([Dense(3), ReLU()], (4,)),
        ([Dense(6), Reshape((2, 1, 3))], (4,)),
        ([Dropout(0.5), Dense(3)], (6,)),
    ])
    def test_each_layer_gradient(self, layers, shape):
        net = Network(layers, shape, seed=7, dtype=F64)
        x = rng(3).standard_normal((4,) + shape)
        out_shape = (4,) + net.output_shape
        target = rng(4).standard_normal(out_shape)
        assert grad_check(net, mse_loss, x, target) < 1e-4


class TestLosses:
    def test_mse_identity(self):
        a = rng().standard_normal((2, 3))
        loss, grad = mse_loss(a, a)
        assert loss == 0.0 and np.all(grad == 0)

    def test_mse_unit_offset(self):
        a = rng().standard_normal((4, 5))
        assert mse_loss(a + 1.0, a)[0] == pytest.approx(1.0)

    def test_mse_loop_oracle(self):
        a, b = rng(1).standard_normal((2, 3)), rng(2).standard_normal((2, 3))
        total = 0.0
        for i in range(2):
            for j in range(3):
                total += (a[i, j] - b[i, j]) ** 2
        loss, grad = mse_loss(a, b)
        assert loss == pytest.approx(total / 6, rel=1e-14)
        for i in range(2):
            for j in range(3):
                assert grad[i, j] == pytest.approx(2 * (a[i, j] - b[i, j]) / 6, rel=1e-14)

    def test_mse_symmetric(self):
        a, b = rng(1).standard_normal((3, 4)), rng(2).standard_normal((3, 4))
        assert mse_loss(a, b)[0] == mse_loss(b, a)[0]

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_xent_uniform(self):
        assert softmax_xent(np.zeros((3, 4)), np.array([0, 1, 3]))[0] == pytest.approx(math.log(4))

    def test_xent_saturated(self):
        logits = np.zeros((2, 5))
        logits[[0, 1], [2, 4]] = 1000.0
        loss, grad = softmax_xent(logits, np.array([2, 4]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_xent_finite_differences(self):
        logits = rng(5).standard_normal((3, 5))
        labels = np.array([4, 0, 2])
        _, grad = softmax_xent(logits, labels)
        num = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits, 1e-5)
        assert relative_error(grad, num).max() < 1e-4

    def test_xent_label_range(self):
        with pytest.raises(ValueError):
            softmax_xent(np.zeros((2, 3)), np.array([0, 3]))

    def test_xent_shift_invariance(self):
        logits = rng(6).standard_normal((4, 3))
        labels = np.array([0, 1, 2, 1])
        l1, g1 = softmax_xent(logits, labels)
        l2, g2 = softmax_xent(logits + 17.0, labels)
        assert l1 == pytest.approx(l2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, atol=1e-15)
        assert np.array_equal(np.argmax(logits, 1), np.argmax(logits + 17.0, 1))


class TestRegularizers:
    def test_dropout_rate_zero(self):
        x = rng().standard_normal((10, 10))
        np.testing.assert_array_equal(dropout(x, 0.0, 1, train=True), x)
        np.testing.assert_array_equal(dropout(x, 0.0, 1, train=False), x)

    def test_dropout_eval_identity(self):
        x = rng().standard_normal((10, 10))
        np.testing.assert_array_equal(dropout(x, 0.5, 1, train=False), x)

    def test_dropout_expectation(self):
        out = dropout(np.ones(10**6), 0.5, seed=3, train=True)
        assert abs(out.mean() - 1.0) < 0.01
        assert set(np.unique(out).tolist()) == {0.0, 2.0}

    def test_dropout_rate_range(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, 0)

    def test_input_noise_zero(self):
        x = rng().standard_normal((4, 4))
        np.testing.assert_array_equal(add_input_noise(x, 0.0, 1), x)

    def test_input_noise_std(self):
        x = np.zeros(10**6)
        assert abs(add_input_noise(x, 0.1, 2).std() - 0.1) < 0.002

    def test_input_noise_deterministic(self):
        x = np.zeros(100)
        np.testing.assert_array_equal(add_input_noise(x, 0.3, 9), add_input_noise(x, 0.3, 9))

    def test_input_noise_negative(self):
        with pytest.raises(ValueError):
            add_input_noise(np.zeros(3), -0.1, 0)


class TestOptimizers:
    @pytest.mark.parametrize("cls", [Adam, RMSProp])
    def test_zero_grad_no_change(self, cls):
        p = Tensor(rng().standard_normal((3, 2)))
        before = p.values.copy()
        opt = cls([p])
        for _ in range(3):
            opt.step()
        np.testing.assert_array_equal(p.values, before)

    def test_adam_first_step(self):
        p = Tensor(np.array([1.0]))
        p.grad[...] = 0.37
        Adam([p], lr=1e-3).step()
        # bias-corrected m/sqrt(v) = g/|g| on the first step
        assert p.values[0] == pytest.approx(1.0 - 1e-3 * 0.37 / (0.37 + 1e-8), rel=1e-12)

    def test_adam_order_independent(self):
        a1, b1 = Tensor(np.ones(3)), Tensor(np.ones((2, 2)))
        a2, b2 = Tensor(np.ones(3)), Tensor(np.ones((2, 2)))
        for t in (a1, a2):
            t.grad[...] = [0.1, -0.2, 0.3]
        for t in (b1, b2):
            t.grad[...] = [[1.0, -1.0], [0.5, 2.0]]
        Adam([a1, b1]).step()
        Adam([b2, a2]).step()
        np.testing.assert_array_equal(a1.values, a2.values)
        np.testing.assert_array_equal(b1.values, b2.values)

    def test_rmsprop_first_step(self):
        g, lr, rho, eps = 0.8, 1e-3, 0.9, 1e-8
        p = Tensor(np.array([0.0]))
        p.grad[...] = g
        RMSProp([p], lr=lr, rho=rho, eps=eps).step()
        assert p.values[0] == pytest.approx(-lr * g / (math.sqrt((1 - rho) * g * g) + eps), rel=1e-12)

    def test_rmsprop_scale_insensitive(self):
        steps = []
        for g in (0.5, 0.5 * 40.0):
            p = Tensor(np.array([0.0]))
            p.grad[...] = g
            RMSProp([p]).step()
            steps.append(abs(p.values[0]))
        assert abs(steps[1] - steps[0]) / steps[0] < 0.01

    def test_state_shape_mismatch(self):
        p = Tensor(np.zeros(3))
        opt = Adam([p])
        p.grad = np.zeros(4)
        with pytest.raises(ValueError):
            opt.step()


class TestGradCheck:
    def test_linear_dense_mse(self):
        net = Network([Dense(3)], (4,), seed=1, dtype=F64)
        x = rng(1).standard_normal((5, 4))
        assert grad_check(net, mse_loss, x, rng(2).standard_normal((5, 3))) < 1e-8

    def test_conv_dense(self):
        net = Network([Conv2D(3, (2, 3), "valid", "relu"), Dense(4)], (1, 2, 8), seed=2, dtype=F64)
        x = rng(3).standard_normal((3, 1, 2, 8))
        assert grad_check(net, softmax_xent, x, np.array([0, 3, 1])) < 1e-4

    def test_dropout_mask_frozen(self):
        net = Network([Dense(8, "relu"), Dropout(0.5), Dense(2)], (4,), seed=3, dtype=F64)
        x = rng(4).standard_normal((6, 4))
        assert grad_check(net, mse_loss, x, rng(5).standard_normal((6, 2))) < 1e-4
        assert not net.layers[1].freeze

    def test_requires_float64(self):
        net = Network([Dense(2)], (3,))
        with pytest.raises(ValueError):
            grad_check(net, mse_loss, np.zeros((1, 3)), np.zeros((1, 2)))


class TestTrain:
    def test_zero_epochs(self):
        net = Network([Dense(1)], (1,), seed=0)
        before = net.get_weights()
        hist = train(net, np.ones((10, 1)), np.ones((10, 1)), config=TrainConfig(max_epochs=0))
        assert hist.train_loss == [] and hist.val_loss == []
        for a, b in zip(before, net.get_weights()):
            np.testing.assert_array_equal(a, b)

    def test_fit_line(self):
        x = np.linspace(-1, 1, 100)[:, None]
        net = Network([Dense(1)], (1,), seed=0, dtype=F64)
        cfg = TrainConfig(learning_rate=0.05, batch_size=10, max_epochs=200, precision=64,
                          early_stop_patience=200)
        hist = train(net, x, 2 * x, config=cfg)
        assert hist.best_val_loss < 1e-3
        assert net.layers[0].W.values[0, 0] == pytest.approx(2.0, abs=0.05)

    def test_deterministic_history(self):
        x = rng(1).standard_normal((64, 1, 2, 8)).astype(np.float32)
        y = rng(2).integers(0, 3, 64)

        def run():
            net = Network([Conv2D(2, (1, 3), "same", "relu"), Dropout(0.3), Dense(3)], (1, 2, 8), seed=5)
            h = train(net, x, y, loss="xent", config=TrainConfig(max_epochs=4, batch_size=16, seed=11))
            return h, net.get_weights()

        (h1, w1), (h2, w2) = run(), run()
        assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
        for a, b in zip(w1, w2):
            np.testing.assert_array_equal(a, b)

    def test_restores_best_and_stops_early(self):
        x = rng(1).standard_normal((50, 3))
        net = Network([Dense(1)], (3,), seed=0, dtype=F64)
        cfg = TrainConfig(learning_rate=0.5, max_epochs=100, early_stop_patience=2, precision=64,
                          optimizer="rmsprop")
        hist = train(net, x, rng(2).standard_normal((50, 1)), config=cfg)
        assert hist.stopped_early
        assert len(hist.val_loss) == hist.best_epoch + 1 + 2

    def test_divergence_reported(self):
        x = np.full((20, 1), 1e20)
        net = Network([Dense(1)], (1,), seed=0)
        with pytest.raises(TrainingDiverged) as err, np.errstate(all="ignore"):
            train(net, x, x, config=TrainConfig(learning_rate=1e10, max_epochs=5))
        assert err.value.epoch == 0

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"validation_fraction": 1.0}, {"precision": 16}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_checkpoint_round_trip(tmp_path):
    net = Network([Conv2D(2, (1, 3), "same", "relu"), Dropout(0.1), Dense(5), Reshape((5, 1, 1))],
                  (1, 2, 8), seed=3, role="convae", meta={"k": 1})
    path = tmp_path / "m.rmlw"
    net.save(path)
    assert path.read_bytes()[:4] == b"RMLW"
    back = read_checkpoint(path)
    assert back.role == "convae" and back.meta == {"k": 1}
    x = rng().standard_normal((3, 1, 2, 8)).astype(np.float32)
    np.testing.assert_array_equal(back.forward(x), net.forward(x))


@settings(max_examples=30, deadline=None)
@given(
    kind=st.sampled_from(["conv_same", "conv_valid", "dense", "dense_relu", "relu", "dropout"]),
    c=st.integers(1, 3), h=st.integers(2, 3), w=st.integers(3, 7),
    kh=st.integers(1, 2), kw=st.integers(1, 3), f=st.integers(1, 3), seed=st.integers(0, 10**6),
)
def test_gradient_property(kind, c, h, w, kh, kw, f, seed):
    layer = {
        "conv_same": lambda: Conv2D(f, (kh, kw), "same", "relu"),
        "conv_valid": lambda: Conv2D(f, (kh, kw), "valid"),
        "dense": lambda: Dense(f),
        "dense_relu": lambda: Dense(f, "relu"),
        "relu": ReLU,
        "dropout": lambda: Dropout(0.3),
    }[kind]()
    net = Network([layer, Dense(2)], (c, h, w), seed=seed % 1000, dtype=F64)
    x = rng(seed).standard_normal((2, c, h, w))
    assert grad_check(net, mse_loss, x, rng(seed + 1).standard_normal((2, 2))) < 1e-4
