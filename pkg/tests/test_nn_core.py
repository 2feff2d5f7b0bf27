import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentbridge.errors import FormatError, ShapeError, UsageError
from latentbridge.nn_core import (
    MLP,
    Activation,
    AdamState,
    DenseLayer,
    GradTape,
    LatentDistribution,
    adam_step,
    backward,
    checkpoint_bytes,
    dense_forward,
    grad_check,
    kl_standard_normal,
    mse,
    mse_grad,
    parse_checkpoint,
    read_checkpoint,
    reparameterize,
    write_checkpoint,
)

finite = st.floats(-5, 5, allow_nan=False)


class TestDenseForward:
    def test_identity(self):
        layer = DenseLayer(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(dense_forward(layer, [1, 2, 3]), [1, 2, 3])

    def test_zero_weights(self):
        layer = DenseLayer(np.zeros((2, 3)), [5, -1])
        np.testing.assert_array_equal(dense_forward(layer, [7, -3, 0.5]), [5, -1])

    def test_relu_hand_multiply(self):
        # W x = (1 - 2, 3 - 4) = (-1, -1) -> relu -> (0, 0)
        layer = DenseLayer([[1, 2], [3, 4]], [0, 0], Activation.RELU)
        np.testing.assert_array_equal(dense_forward(layer, [1, -1]), [0, 0])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            dense_forward(DenseLayer(np.eye(3), np.zeros(3)), [1, 2])

    def test_deterministic(self):
        net = MLP.build([4, 6, 3], rng=0)
        x = np.random.default_rng(1).normal(size=(5, 4))
        assert net(x).tobytes() == net(x).tobytes()


class TestBackward:
    def test_sum_of_outputs(self):
        rng = np.random.default_rng(0)
        layer = DenseLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
        x = rng.normal(size=4)
        tape = GradTape()
        dense_forward(layer, x, tape)
        grads, _ = backward(tape, np.ones(3))
        np.testing.assert_allclose(grads[0].weights, np.outer(np.ones(3), x))
        np.testing.assert_allclose(grads[0].bias, np.ones(3))

    def test_constant_loss_gives_zero(self):
        net = MLP.build([3, 4, 2], rng=0)
        tape = GradTape()
        out = net.forward(np.ones(3), tape)
        # loss = mse(out, out) is identically 0
        grads, g_in = net.backward(tape, mse_grad(out, out))
        assert all(not np.any(g) for g in grads)
        assert not np.any(g_in)

    def test_tape_consumed_once(self):
        net = MLP.build([2, 2], rng=0)
        tape = GradTape()
        net.forward(np.ones(2), tape)
        backward(tape, np.ones(2))
        with pytest.raises(UsageError):
            backward(tape, np.ones(2))

    def test_loss_seed_scales(self):
        net = MLP.build([3, 2], rng=0)
        t1, t2 = GradTape(), GradTape()
        net.forward(np.ones(3), t1)
        net.forward(np.ones(3), t2)
        g1, _ = backward(t1, np.ones(2))
        g2, _ = backward(t2, np.ones(2), loss_seed=2.5)
        np.testing.assert_allclose(g2[0].weights, 2.5 * g1[0].weights)

    @pytest.mark.parametrize("act", list(Activation))
    def test_finite_differences(self, act):
        rng = np.random.default_rng(int(act))
        net = MLP.build([4, 5, 3], hidden=act, output=act, rng=rng)
        x = rng.normal(size=(6, 4))
        target = rng.normal(size=(6, 3))

        def loss_fn(n):
            tape = GradTape()
            out = n.forward(x, tape)
            loss = mse(out, target).mean()
            grads, _ = n.backward(tape, mse_grad(out, target) / len(x))
            return loss, grads

        assert grad_check(net, loss_fn).max_rel_error < 1e-4


class TestMse:
    def test_values(self):
        assert mse([1, 2], [1, 2]) == 0
        assert mse([0, 0], [2, 0]) == 2.0
        assert mse([1, 1, 1], [0, 0, 0]) == 1.0

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            mse([1, 2], [1, 2, 3])


class TestKl:
    def test_reference(self):
        assert kl_standard_normal(LatentDistribution(np.zeros(4), np.zeros(4))) == 0

    def test_unit_mean(self):
        assert kl_standard_normal(LatentDistribution([1.0], [0.0])) == pytest.approx(0.5, abs=1e-15)

    def test_doubled_variance(self):
        # 0.5 * (2 - 1 - ln 2)
        got = kl_standard_normal(LatentDistribution([0.0], [math.log(2)]))
        assert got == pytest.approx(0.5 * (1 - math.log(2)), abs=1e-15)
        assert got == pytest.approx(0.153426, abs=1e-6)

    @given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
    def test_non_negative(self, mu, logvar):
        assert kl_standard_normal(LatentDistribution(mu, logvar)) >= 0

    @given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
    def test_zero_only_at_reference(self, mu, logvar):
        kl = kl_standard_normal(LatentDistribution(mu, logvar))
        if np.any(np.abs(mu) > 1e-3) or np.any(np.abs(logvar) > 1e-3):
            assert kl > 1e-12


class TestReparameterize:
    def test_zero_noise_is_mu_bitwise(self):
        ld = LatentDistribution(np.random.default_rng(0).normal(size=7), np.full(7, 0.3))
        assert reparameterize(ld, np.zeros(7)).tobytes() == ld.mu.tobytes()

    def test_degenerate_variance(self):
        ld = LatentDistribution([0.25, -1.0], [-np.inf, -np.inf])
        np.testing.assert_array_equal(reparameterize(ld, [3.0, -2.0]), [0.25, -1.0])

    def test_unit_sigma(self):
        assert reparameterize(LatentDistribution([0.0], [0.0]), [0.5])[0] == 0.5


class TestAdam:
    def test_zero_gradient_fresh_state(self):
        p = np.random.default_rng(0).normal(size=10)
        before = p.tobytes()
        adam_step(AdamState.fresh(10), p, np.zeros(10))
        assert p.tobytes() == before

    def test_first_step_magnitude(self):
        p = np.array([0.0])
        st_ = AdamState.fresh(1, lr=0.001)
        adam_step(st_, p, np.array([1.0]))
        assert p[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
        assert st_.step == 1

    def test_monotone_while_gradient_positive(self):
        p = np.array([1.0])
        st_ = AdamState.fresh(1)
        trace = [p[0]]
        for g in (1.0, 1.0, 0.5, 2.0):
            adam_step(st_, p, np.array([g]))
            trace.append(p[0])
        assert np.all(np.diff(trace) < 0)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.fresh(3), np.zeros(3), np.zeros(2))

    def test_lr_must_be_positive(self):
        with pytest.raises(UsageError):
            AdamState.fresh(2, lr=0.0)


class TestGradCheck:
    def _linear_case(self):
        rng = np.random.default_rng(3)
        net = MLP.build([3, 2], rng=rng)
        x, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))

        def loss_fn(n):
            tape = GradTape()
            out = n.forward(x, tape)
            grads, _ = n.backward(tape, mse_grad(out, y) / len(x))
            return mse(out, y).mean(), grads

        return net, loss_fn

    def test_linear_network(self):
        net, loss_fn = self._linear_case()
        assert grad_check(net, loss_fn, tolerance=1e-6).passed

    def test_relu_network_away_from_kinks(self):
        rng = np.random.default_rng(5)
        net = MLP.build([3, 8, 2], rng=rng)
        x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))

        def loss_fn(n):
            tape = GradTape()
            out = n.forward(x, tape)
            grads, _ = n.backward(tape, mse_grad(out, y) / len(x))
            return mse(out, y).mean(), grads

        assert grad_check(net, loss_fn).passed

    def test_corrupted_gradient_fails(self):
        net, loss_fn = self._linear_case()

        def broken(n):
            loss, grads = loss_fn(n)
            grads[0] = grads[0] + 0.1
            return loss, grads

        report = grad_check(net, broken)
        assert not report.passed
        assert report.worst_index[0] == 0

    def test_parameter_values_restored(self):
        net, loss_fn = self._linear_case()
        before = [p.copy() for p in net.parameters()]
        grad_check(net, loss_fn)
        for a, b in zip(before, net.parameters()):
            assert a.tobytes() == b.tobytes()


class TestCheckpoint:
    def test_roundtrip_float32(self, tmp_path):
        net = MLP.build([5, 7, 3], hidden=Activation.TANH, output=Activation.SIGMOID, rng=1)
        write_checkpoint(tmp_path / "n.lbnn", net)
        back = read_checkpoint(tmp_path / "n.lbnn")
        assert [l.activation for l in back.layers] == [Activation.TANH, Activation.SIGMOID]
        for a, b in zip(net.parameters(), back.parameters()):
            np.testing.assert_array_equal(a.astype(np.float32), b)
        # second write reproduces the same bytes
        assert checkpoint_bytes(back) == (tmp_path / "n.lbnn").read_bytes()

    def test_layout(self):
        net = MLP([DenseLayer([[1.0, 2.0]], [3.0], Activation.RELU)])
        data = checkpoint_bytes(net)
        assert data[:5] == b"LBNN1"
        assert data[5:14] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"\x01"
        assert np.frombuffer(data[14:], "<f4").tolist() == [1.0, 2.0, 3.0]

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="LBNN1"):
            parse_checkpoint(b"XXXXX" + b"\0" * 20)

    def test_truncated(self):
        data = checkpoint_bytes(MLP.build([3, 2], rng=0))
        with pytest.raises(FormatError, match="byte offset"):
            parse_checkpoint(data[:-3])
