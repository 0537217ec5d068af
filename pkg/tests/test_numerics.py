import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tecnn.errors import ConfigurationError, ContractViolation, NumericError
from tecnn.harness.presets import build
from tecnn.numerics import (
    BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, Network, ReLU, Softmax, grad_check,
    network_backward, network_forward, sgd_momentum_step, softmax_cross_entropy,
)
from tecnn.numerics.gradcheck import check_layer_kinds
from tecnn.numerics.network import Gradients


def test_identity_linear():
    net = Network([Linear(1, 1)], (1,))
    net.layers[0].params["weight"][:] = 1.0
    out = network_forward(net, np.array([[3.0]]), "eval").output
    assert out.tolist() == [[3.0]]


def test_usps_preset_softmax_rows():
    net = build("usps", seed=0)
    x = np.random.default_rng(0).standard_normal((60, 1, 16, 16)).astype(np.float32)
    out = network_forward(net, x, "train", np.random.default_rng(1)).output
    assert out.shape == (60, 10)
    np.testing.assert_allclose(out.astype(np.float64).sum(axis=1), 1.0, atol=1e-6)


def _hand_rolled(w1, b1, w2, b2, x):
    # plain python double arithmetic
    h = [max(0.0, sum(float(w1[j][i]) * float(x[i]) for i in range(len(x))) + float(b1[j]))
         for j in range(len(w1))]
    z = [sum(float(w2[k][j]) * h[j] for j in range(len(h))) + float(b2[k]) for k in range(len(w2))]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    return [v / sum(e) for v in e]


def test_two_layer_matches_hand_arithmetic():
    net = Network([Linear(4, 3), ReLU(), Linear(3, 2), Softmax()], (4,), seed=7)
    rng = np.random.default_rng(7)
    net.layers[0].params["bias"][:] = rng.standard_normal(3)
    net.layers[2].params["bias"][:] = rng.standard_normal(2)
    x = rng.standard_normal(4).astype(np.float32)
    out = network_forward(net, x[None], "eval").output[0]
    ref = _hand_rolled(net.layers[0].params["weight"], net.layers[0].params["bias"],
                       net.layers[2].params["weight"], net.layers[2].params["bias"], x)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_shape_mismatch_is_configuration_error():
    net = Network([Linear(4, 2)], (4,))
    with pytest.raises(ConfigurationError):
        network_forward(net, np.zeros((2, 5)), "eval")
    with pytest.raises(ConfigurationError):
        Network([Conv2d(1, 4, 3), Linear(10, 2)], (1, 5, 5))


def test_non_finite_activation_names_layer():
    net = Network([Linear(2, 2), ReLU()], (2,))
    net.layers[0].params["weight"][:] = np.inf
    with pytest.raises(NumericError, match="layer 0"):
        network_forward(net, np.ones((1, 2)), "eval")


class TestSoftmaxCrossEntropy:
    def test_one_hot_gives_zero(self):
        loss, _ = softmax_cross_entropy(np.array([[0.0, 1.0, 0.0]]), np.array([1]))
        assert loss == 0.0

    def test_uniform_gives_ln10(self):
        loss, _ = softmax_cross_entropy(np.full((2, 10), 0.1), np.array([3, 7]))
        assert loss == pytest.approx(math.log(10), abs=1e-12)
        assert loss == pytest.approx(2.302585, abs=1e-6)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, 4)

        def loss_of(z):
            p = np.exp(z - z.max(axis=1, keepdims=True))
            return softmax_cross_entropy(p / p.sum(axis=1, keepdims=True), labels)

        _, grad = loss_of(logits)
        eps = 1e-6
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            zp, zm = logits.copy(), logits.copy()
            zp[idx] += eps
            zm[idx] -= eps
            numeric[idx] = (loss_of(zp)[0] - loss_of(zm)[0]) / (2 * eps)
        rel = np.abs(grad - numeric) / np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-12)
        assert rel.max() < 1e-6

    def test_clamps_and_counts(self):
        stats = {}
        loss, _ = softmax_cross_entropy(np.array([[1.0, 0.0]]), np.array([1]), stats)
        assert loss == pytest.approx(-math.log(1e-12))
        assert stats["clamped"] == 1

    def test_bad_labels(self):
        with pytest.raises(ContractViolation):
            softmax_cross_entropy(np.full((1, 2), 0.5), np.array([2]))


def test_zero_dloss_gives_zero_gradients():
    net = build("usps-mini", seed=1)
    x = np.random.default_rng(1).standard_normal((6, 1, 16, 16))
    trace = network_forward(net, x, "train", np.random.default_rng(0))
    grads = network_backward(net, trace, np.zeros((6, 10)))
    assert all(not g.any() for g in grads.params.values())


def test_linear_weight_gradient_is_outer_product():
    layer = Linear(2, 2)
    layer.init_params((2,), np.random.default_rng(0), np.float64)
    _, cache = layer.forward(np.array([[2.0, 3.0]]), True, None)
    _, grads = layer.backward(np.array([[1.0, 0.0]]), cache)
    assert grads["weight"].tolist() == [[2.0, 3.0], [0.0, 0.0]]


def test_backward_requires_train_trace():
    net = Network([Linear(2, 2), Softmax()], (2,))
    trace = network_forward(net, np.ones((1, 2)), "eval")
    with pytest.raises(ContractViolation):
        network_backward(net, trace, np.zeros((1, 2)))
    trace = network_forward(net, np.ones((1, 2)), "train")
    trace.caches.pop()
    with pytest.raises(ContractViolation):
        network_backward(net, trace, np.zeros((1, 2)))


def _scalar_net(w0):
    net = Network([Linear(1, 1)], (1,), dtype=np.float64)
    net.layers[0].params["weight"][:] = w0
    net.layers[0].params["bias"][:] = 0.0
    return net


def _grads(g):
    return Gradients({"0.weight": np.array([[g]]), "0.bias": np.array([0.0])})


class TestSgdMomentum:
    def test_plain_step(self):
        net = _scalar_net(1.0)
        sgd_momentum_step(net, _grads(1.0), lr=0.01, momentum=0.0)
        assert net.layers[0].params["weight"][0, 0] == pytest.approx(0.99, abs=1e-15)

    def test_momentum_recurrence(self):
        net = _scalar_net(0.0)
        sgd_momentum_step(net, _grads(1.0), lr=1.0, momentum=0.9)
        assert net.layers[0].params["weight"][0, 0] == -1.0
        sgd_momentum_step(net, _grads(1.0), lr=1.0, momentum=0.9)
        assert net.opt_state["0.weight"][0, 0] == pytest.approx(1.9, abs=1e-15)
        assert net.layers[0].params["weight"][0, 0] == pytest.approx(-2.9, abs=1e-15)

    @pytest.mark.parametrize("momentum", [0.0, 0.5, 0.9])
    def test_zero_gradient_fixed_point(self, momentum):
        net = _scalar_net(0.37)
        sgd_momentum_step(net, _grads(0.0), lr=0.1, momentum=momentum)
        assert net.layers[0].params["weight"][0, 0] == 0.37

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(ConfigurationError):
            sgd_momentum_step(_scalar_net(0.0), _grads(0.0), lr=0.0, momentum=0.9)
        with pytest.raises(ConfigurationError):
            sgd_momentum_step(_scalar_net(0.0), _grads(0.0), lr=0.1, momentum=1.0)


class TestGradCheck:
    def test_linear_softmax(self):
        net = Network([Linear(5, 3), Softmax()], (5,), seed=2, dtype=np.float64)
        rng = np.random.default_rng(2)
        assert grad_check(net, rng.standard_normal((4, 5)), rng.integers(0, 3, 4), eps=1e-5) < 1e-6

    def test_conv_3x3_on_5x5(self):
        net = Network([Conv2d(1, 1, 3)], (1, 5, 5), seed=4, dtype=np.float64)
        x = np.random.default_rng(4).standard_normal((1, 1, 5, 5))
        assert grad_check(net, x, np.zeros(1, int), eps=1e-5) < 1e-4

    def test_batchnorm_train_mode(self):
        net = Network([BatchNorm2d(3)], (3, 4, 4), seed=5, dtype=np.float64)
        x = np.random.default_rng(5).standard_normal((3, 3, 4, 4))
        assert grad_check(net, x, np.zeros(3, int), eps=1e-5) < 1e-4

    def test_requires_float64(self):
        net = Network([Linear(2, 2), Softmax()], (2,))
        with pytest.raises(ConfigurationError):
            grad_check(net, np.ones((1, 2)), np.zeros(1, int))

    def test_every_kind_on_a_few_seeds(self):
        worst = check_layer_kinds(seeds=5)
        assert set(worst) >= {"conv2d", "batchnorm2d", "relu", "maxpool2d", "dropout", "linear", "softmax"}
        assert max(worst.values()) < 1e-4

    def test_full_stack_gradients(self):
        # conv bias ahead of batchnorm has an identically zero gradient, so
        # compare with an absolute floor instead of the pure relative error
        net = Network([Conv2d(1, 3, 3, padding=1), BatchNorm2d(3), ReLU(), MaxPool2d(2),
                       Linear(48, 6), Dropout(0.25), Linear(6, 4), Softmax()],
                      (1, 8, 8), seed=0, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 1, 8, 8))
        y = rng.integers(0, 4, 4)

        def loss():
            t = network_forward(net, x, "train", np.random.default_rng(9))
            return softmax_cross_entropy(t.output, y)[0]

        t = network_forward(net, x, "train", np.random.default_rng(9))
        grads = network_backward(net, t, softmax_cross_entropy(t.output, y)[1])
        eps = 1e-5
        for key, p in net.parameters():
            flat = p.reshape(-1)
            for i in range(min(flat.size, 10)):
                old = flat[i]
                flat[i] = old + eps
                lp = loss()
                flat[i] = old - eps
                lm = loss()
                flat[i] = old
                assert grads.params[key].reshape(-1)[i] == pytest.approx((lp - lm) / (2 * eps),
                                                                         rel=1e-4, abs=1e-8), key


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 12), st.floats(0.1, 30.0), st.integers(0, 2**31))
def test_softmax_rows_are_distributions(batch, classes, scale, seed):
    x = np.random.default_rng(seed).standard_normal((batch, classes)) * scale
    p, _ = Softmax().forward(x.astype(np.float32), False, None)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.astype(np.float64).sum(axis=1), 1.0, atol=1e-6)


def test_eval_forward_is_deterministic():
    net = build("usps-mini", seed=3)
    x = np.random.default_rng(3).standard_normal((8, 1, 16, 16)).astype(np.float32)
    a = network_forward(net, x, "eval").output
    b = network_forward(net, x, "eval").output
    assert a.tobytes() == b.tobytes()


def test_train_step_bit_reproducible():
    def one_step():
        net = build("usps-mini", seed=11)
        x = np.random.default_rng(11).standard_normal((8, 1, 16, 16)).astype(np.float32)
        y = np.arange(8) % 10
        t = network_forward(net, x, "train", np.random.default_rng(5))
        grads = network_backward(net, t, softmax_cross_entropy(t.output, y)[1])
        sgd_momentum_step(net, grads, 0.01, 0.9)
        return b"".join(p.tobytes() for _, p in net.parameters())

    assert one_step() == one_step()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_maxpool_routes_each_gradient_once(n, c, half, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, 2 * half, 2 * half))
    pool = MaxPool2d(2)
    out, cache = pool.forward(x, True, None)
    dout = rng.standard_normal(out.shape)
    dx, _ = pool.backward(dout, cache)
    assert np.count_nonzero(dx) == np.count_nonzero(dout)
    window_sums = dx.reshape(n, c, half, 2, half, 2).sum(axis=(3, 5))
    np.testing.assert_allclose(window_sums, dout)


def test_dropout_eval_identity_and_train_scaling():
    layer = Dropout(0.25)
    x = np.ones((1000, 10), np.float32)
    assert layer.forward(x, False, None)[0] is x
    out, mask = layer.forward(x, True, np.random.default_rng(0))
    assert set(np.unique(out).tolist()) <= {0.0, np.float32(1 / 0.75)}
    with pytest.raises(ConfigurationError):
        Dropout(1.0)


def test_batchnorm_running_stats_and_eval():
    bn = BatchNorm2d(2)
    bn.init_params((2, 3, 3), None, np.float64)
    x = np.random.default_rng(0).normal(3.0, 2.0, (4, 2, 3, 3))
    bn.forward(x, True, None)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    out, _ = bn.forward(x, False, None)
    expected = (x - bn.buffers["running_mean"][None, :, None, None]) / np.sqrt(
        bn.buffers["running_var"][None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, expected)
