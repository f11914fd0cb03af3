"""Dense networks, the two-head policy, gradients and optimizers."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from soglab.nn import (
    Dense,
    DenseNet,
    OptimizerState,
    TwoHeadPolicyNet,
    grad_check,
    opt_step,
    squared_loss_grads,
)


def hand_forward(weights, biases, acts, x):
    """Reference forward pass written out layer by layer."""
    h = np.array(x, dtype=float)
    for w, b, a in zip(weights, biases, acts):
        z = [sum(w[i][j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        h = np.array([np.tanh(v) if a == "tanh" else max(v, 0.0) if a == "relu" else v for v in z])
    return h


def random_net(rng, sizes, act="tanh"):
    return DenseNet.init(sizes, rng, hidden_activation=act)


class TestForward:
    def test_identity_layer(self):
        net = DenseNet([Dense(np.eye(2), np.zeros(2))])
        np.testing.assert_array_equal(net.forward(np.array([1.0, 2.0])), [1.0, 2.0])

    def test_zero_weights_give_bias(self):
        net = DenseNet([Dense(np.zeros((1, 4)), np.array([3.0]))])
        np.testing.assert_array_equal(net.forward(np.array([0.3, -1.0, 7.0, 2.0])), [3.0])

    def test_two_layer_tanh_matches_hand_rolled(self):
        net = random_net(np.random.default_rng(0), [2, 5, 3])
        ws = [l.weight.tolist() for l in net.layers]
        bs = [(l.bias + 0.1 * np.arange(l.bias.size)).tolist() for l in net.layers]
        for l, b in zip(net.layers, bs):
            l.bias[:] = b
        expected = hand_forward(ws, bs, ["tanh", "identity"], [0.5, -0.5])
        np.testing.assert_allclose(net.forward(np.array([0.5, -0.5])), expected, rtol=1e-14, atol=1e-15)

    def test_zero_params_zero_input(self):
        for act in ("identity", "relu"):
            net = DenseNet([Dense(np.zeros((3, 2)), np.zeros(3), act), Dense(np.zeros((2, 3)), np.zeros(2))])
            np.testing.assert_array_equal(net.forward(np.zeros(2)), np.zeros(2))

    def test_dimension_mismatch_reports_shapes(self):
        net = random_net(np.random.default_rng(0), [3, 4, 1])
        with pytest.raises(ValueError, match="3"):
            net.forward(np.zeros(2))

    def test_layers_must_chain(self):
        with pytest.raises(ValueError):
            DenseNet([Dense(np.zeros((3, 2)), np.zeros(3)), Dense(np.zeros((1, 4)), np.zeros(1))])

    def test_forward_is_pure(self):
        net = random_net(np.random.default_rng(1), [3, 8, 8, 2])
        x = np.random.default_rng(2).standard_normal((5, 3))
        a, b = net.forward(x), net.forward(x)
        assert a.tobytes() == b.tobytes()


class TestBackward:
    def test_linear_regression_gradient(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((2, 3))
        net = DenseNet([Dense(w.copy(), np.zeros(2))])
        x, t = rng.standard_normal(3), rng.standard_normal(2)
        _, grads = squared_loss_grads(net, x, t)
        np.testing.assert_allclose(grads[0], 2 * np.outer(w @ x - t, x), rtol=1e-13)

    def test_zero_output_grad(self):
        net = random_net(np.random.default_rng(0), [3, 6, 2])
        grads, _ = net.backward(np.ones(3), np.zeros(2))
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_matches_finite_differences(self):
        net = random_net(np.random.default_rng(5), [3, 7, 2])
        assert grad_check(net, np.array([0.2, -0.4, 1.0]), np.array([0.5, -0.1]), 1e-5) < 1e-4

    def test_linear_grad_check_exact(self):
        net = DenseNet([Dense(np.random.default_rng(0).standard_normal((2, 3)), np.ones(2))])
        assert grad_check(net, np.array([1.0, 2.0, 3.0]), np.zeros(2)) < 1e-8

    def test_grad_check_eps_range(self):
        net = random_net(np.random.default_rng(0), [1, 1])
        with pytest.raises(ValueError):
            grad_check(net, np.ones(1), np.ones(1), eps=0.1)

    def test_input_gradient(self):
        net = random_net(np.random.default_rng(6), [2, 4, 1])
        x = np.array([0.3, -0.7])
        _, gx = net.backward(x, np.ones(1))
        eps = 1e-6
        num = [(net.forward(x + eps * e)[0] - net.forward(x - eps * e)[0]) / (2 * eps) for e in np.eye(2)]
        np.testing.assert_allclose(gx, num, rtol=1e-7)

    @given(seed=st.integers(0, 2**31 - 1), act=st.sampled_from(["tanh", "relu", "identity"]))
    def test_random_nets(self, seed, act):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 3))]
        net = random_net(rng, sizes, act)
        x = rng.standard_normal(sizes[0])
        pre = x @ net.layers[0].weight.T + net.layers[0].bias
        if act == "relu" and np.min(np.abs(pre)) < 1e-3:
            return  # too close to a kink for central differences
        assert grad_check(net, x, rng.standard_normal(sizes[-1])) < 1e-4


class TestOptimizer:
    def test_sgd_formula(self):
        p = [np.array([1.0])]
        opt_step(OptimizerState("sgd", 0.1), p, [np.array([2.0])])
        np.testing.assert_allclose(p[0], [0.8], rtol=1e-15)

    def test_zero_gradient(self):
        for kind in ("sgd", "adam"):
            p = [np.array([1.5, -2.0])]
            opt_step(OptimizerState(kind, 0.1), p, [np.zeros(2)])
            np.testing.assert_array_equal(p[0], [1.5, -2.0])

    def test_adam_first_step(self):
        # m_hat = g, v_hat = g^2 at t=1 so the step is lr * g / (|g| + eps)
        p = [np.array([0.0])]
        state = OptimizerState("adam", 1e-3)
        opt_step(state, p, [np.array([1.0])])
        np.testing.assert_allclose(p[0], [-1e-3 / (1 + 1e-8)], rtol=1e-12)
        assert state.step == 1
        assert state.m[0].shape == p[0].shape and state.v[0].shape == p[0].shape

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            opt_step(OptimizerState("sgd", 0.1), [np.zeros(2)], [np.zeros(3)])

    def test_non_finite_gradient_rejected(self):
        with pytest.raises(FloatingPointError):
            opt_step(OptimizerState("sgd", 0.1), [np.zeros(2)], [np.array([np.nan, 0.0])])

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            OptimizerState("rmsprop", 0.1)

    @given(seed=st.integers(0, 2**31 - 1))
    def test_small_sgd_step_does_not_increase_convex_loss(self, seed):
        rng = np.random.default_rng(seed)
        net = DenseNet([Dense(rng.standard_normal((2, 3)), rng.standard_normal(2))])
        x, t = rng.standard_normal((20, 3)), rng.standard_normal((20, 2))
        before, grads = squared_loss_grads(net, x, t)
        opt_step(OptimizerState("sgd", 1e-4), net.params(), grads)
        after, _ = squared_loss_grads(net, x, t)
        assert after <= before


class TestTwoHeadPolicy:
    def make(self, seed=0):
        return TwoHeadPolicyNet.init(10, 3, 2, [16, 16], np.random.default_rng(seed))

    def test_additive_heads_reduce_to_dense(self):
        pol = self.make()
        pol.latent_head.weight[:] = 0.0
        pol.latent_head.bias[:] = 0.0
        dense = DenseNet([Dense(pol.state_head.weight, pol.state_head.bias, "tanh"), *pol.trunk.layers])
        s = np.random.default_rng(1).standard_normal((4, 10))
        np.testing.assert_allclose(pol.forward(s, np.eye(3)[[0, 1, 2, 0]]), dense.forward(s), rtol=1e-14)

    def test_head_widths_must_match(self):
        with pytest.raises(ValueError):
            TwoHeadPolicyNet(Dense(np.zeros((4, 10)), np.zeros(4)), Dense(np.zeros((5, 3)), np.zeros(5)),
                             DenseNet.init([4, 2], np.random.default_rng(0)), [0.0, 0.0])

    def test_log_std_clamped(self):
        pol = TwoHeadPolicyNet.init(10, 3, 2, [8], np.random.default_rng(0), log_std=-9.0)
        np.testing.assert_array_equal(pol.log_std, [-5.0, -5.0])
        pol.log_std[:] = 7.0
        pol.clamp_log_std()
        np.testing.assert_array_equal(pol.log_std, [2.0, 2.0])

    def test_backward_matches_finite_differences(self):
        pol = self.make(3)
        rng = np.random.default_rng(4)
        s, z, g = rng.standard_normal((5, 10)), np.eye(3)[[0, 2, 1, 1, 0]], rng.standard_normal((5, 2))
        grads, (gs, gz) = pol.backward(s, z, g)
        eps = 1e-6
        for p, ga in zip(pol.params()[:-1], grads[:-1]):
            flat = p.reshape(-1)
            for j in range(0, flat.size, max(1, flat.size // 7)):
                old = flat[j]
                flat[j] = old + eps
                up = np.sum(g * pol.forward(s, z))
                flat[j] = old - eps
                dn = np.sum(g * pol.forward(s, z))
                flat[j] = old
                np.testing.assert_allclose(ga.reshape(-1)[j], (up - dn) / (2 * eps), rtol=1e-5, atol=1e-8)
        np.testing.assert_array_equal(grads[-1], 0.0)
        ds = np.zeros_like(s)
        ds[1, 4] = eps
        np.testing.assert_allclose(gs[1, 4], (np.sum(g * pol.forward(s + ds, z)) - np.sum(g * pol.forward(s - ds, z))) / (2 * eps), rtol=1e-5)

    def test_log_prob_and_entropy(self):
        pol = self.make()
        pol.log_std[:] = 0.0
        assert pol.entropy() == pytest.approx(2 * 0.5 * np.log(2 * np.pi * np.e), abs=1e-12)
        s, z = np.zeros((1, 10)), np.eye(3)[:1]
        mean = pol.forward(s, z)
        np.testing.assert_allclose(pol.log_prob(s, z, mean), [-np.log(2 * np.pi)], rtol=1e-14)

    def test_copy_is_independent(self):
        pol = self.make()
        c = pol.copy()
        c.trunk.layers[0].weight += 1.0
        assert not np.allclose(c.trunk.layers[0].weight, pol.trunk.layers[0].weight)
