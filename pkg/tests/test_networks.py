import numpy as np
import pytest

from goalchain import autodiff as ad
from goalchain.autodiff import NumericsError
from goalchain.networks import (
    AdamState,
    DimensionError,
    GaussianPolicyHead,
    MLP,
    load_checkpoint,
    optimizer_step,
    polyak_update,
    save_checkpoint,
)


def loop_forward(net, x):
    """Independent oracle: evaluate the network with explicit Python loops."""
    h = list(map(float, x))
    last = len(net.layer_sizes) - 2
    for l in range(len(net.layer_sizes) - 1):
        w, b = net.layer(l)
        out = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += h[i] * float(w[i, j])
            out.append(acc)
        act = net.output_activation if l == last else net.hidden_activation
        if act == "relu":
            out = [max(v, 0.0) for v in out]
        elif act == "tanh":
            out = [float(np.tanh(v)) for v in out]
        h = out
    return np.array(h)


class TestForward:
    def test_identity_layer(self):
        net = MLP((2, 2))
        w, b = net.layer(0)
        w[...] = np.eye(2)
        b[...] = 0.0
        np.testing.assert_array_equal(net.forward([1.0, 2.0]), [1.0, 2.0])

    def test_zero_network(self):
        net = MLP((3, 4, 2))
        np.testing.assert_array_equal(net.forward([5.0, -1.0, 0.3]), [0.0, 0.0])

    def test_random_342_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        net = MLP((3, 4, 2), rng=rng)
        x = np.array([0.5, -0.5, 1.0])
        np.testing.assert_allclose(net.forward(x), loop_forward(net, x), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        net = MLP((3, 2))
        with pytest.raises(DimensionError):
            net.forward([1.0, 2.0])

    def test_forward_is_pure(self):
        rng = np.random.default_rng(0)
        net = MLP((4, 8, 8, 3), rng=rng)
        x = rng.normal(size=4)
        a = net.forward(x)
        b = net.forward(x)
        assert np.array_equal(a, b)

    def test_batch_matches_per_row(self):
        rng = np.random.default_rng(2)
        net = MLP((3, 5, 2), rng=rng)
        xs = rng.normal(size=(6, 3))
        batch = net.forward(xs)
        rows = np.stack([net.forward(x) for x in xs])
        # BLAS may order the row/batch dot products differently
        np.testing.assert_allclose(batch, rows, rtol=1e-12, atol=0)


class TestGradient:
    def test_constant_loss_gives_zero_grads(self):
        net = MLP((2, 3, 1), rng=np.random.default_rng(1))
        grads = ad.gradient(net.params(), lambda: ad.mul(ad.mean(net.apply(np.ones((1, 2)))), 0.0))
        for g in grads:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_sum_of_weights_loss(self):
        net = MLP((2, 3), rng=np.random.default_rng(1))
        w_t, b_t = net.params()
        # loss = sum of all weights, biases excluded
        g = ad.gradient([w_t, b_t], lambda: ad.mul(ad.mean(w_t), float(w_t.data.size)))
        np.testing.assert_allclose(g[0], np.ones_like(w_t.data))
        np.testing.assert_array_equal(g[1], np.zeros_like(b_t.data))

    def test_mse_gradients_match_finite_differences(self):
        # step 1e-5, relative error < 1e-4, 64-bit
        rng = np.random.default_rng(42)
        for _ in range(10):
            net = MLP((3, 8, 8, 2), rng=rng)
            x = rng.normal(size=(4, 3))
            y = rng.normal(size=(4, 2))

            def loss_t():
                return ad.mean(ad.square(ad.sub(net.apply(x), ad.constant(y))))

            net.zero_grad()
            loss_t().backward()
            analytic = net.grad.copy()

            h = 1e-5
            fd = np.zeros_like(net.theta)
            for k in range(net.theta.size):
                orig = net.theta[k]
                net.theta[k] = orig + h
                fp = float(np.mean((net.forward(x) - y) ** 2))
                net.theta[k] = orig - h
                fm = float(np.mean((net.forward(x) - y) ** 2))
                net.theta[k] = orig
                fd[k] = (fp - fm) / (2 * h)
            err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            assert err < 1e-4


class TestOptimizer:
    def test_zero_gradient_leaves_params_decays_moments(self):
        # zero first moment: no momentum carry-over, so params stay put while
        # the second moment decays by beta2
        params = np.array([1.0, -2.0])
        state = AdamState.for_params(params)
        state.v[...] = [0.25, 0.25]
        optimizer_step(params, np.zeros(2), state)
        np.testing.assert_array_equal(params, [1.0, -2.0])
        np.testing.assert_array_equal(state.m, [0.0, 0.0])
        np.testing.assert_allclose(state.v, [0.24975, 0.24975])
        assert state.step == 1

    def test_first_step_is_minus_lr(self):
        # closed form: with g = 1, mhat = 1, vhat = 1 -> step = -lr/(1+eps)
        params = np.array([0.0])
        state = AdamState.for_params(params, lr=3e-4)
        optimizer_step(params, np.array([1.0]), state)
        assert abs(params[0] + state.lr) < 1e-8

    def test_two_steps_match_hand_rolled_oracle(self):
        rng = np.random.default_rng(5)
        params = rng.normal(size=4)
        grads = [rng.normal(size=4), rng.normal(size=4)]

        # independent oracle with explicit scalars
        p = params.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        lr, b1, b2, eps = 3e-4, 0.9, 0.999, 1e-8
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p = p - lr * mhat / (np.sqrt(vhat) + eps)

        state = AdamState.for_params(params)
        for g in grads:
            optimizer_step(params, g, state)
        np.testing.assert_allclose(params, p, rtol=0, atol=1e-15)

    def test_nonfinite_gradient_raises(self):
        params = np.zeros(2)
        state = AdamState.for_params(params)
        with pytest.raises(NumericsError):
            optimizer_step(params, np.array([np.nan, 0.0]), state)

    def test_step_counter_increments(self):
        params = np.zeros(3)
        state = AdamState.for_params(params)
        for expect in (1, 2, 3):
            optimizer_step(params, np.ones(3), state)
            assert state.step == expect


class TestPolyak:
    def test_tau_one_copies(self):
        t = np.array([1.0, 2.0])
        o = np.array([5.0, -5.0])
        polyak_update(t, o, 1.0)
        np.testing.assert_array_equal(t, o)
        polyak_update(t, o, 1.0)  # idempotent thereafter
        np.testing.assert_array_equal(t, o)

    def test_small_tau_arithmetic(self):
        t = np.array([0.0])
        polyak_update(t, np.array([1.0]), 0.005)
        np.testing.assert_allclose(t, [0.005])

    def test_geometric_convergence(self):
        # closed form: t_n = o + (1-tau)^n (t_0 - o)
        tau = 0.05
        t0, o = 2.0, -1.0
        t = np.array([t0])
        online = np.array([o])
        for n in range(1, 50):
            polyak_update(t, online, tau)
            expect = o + (1 - tau) ** n * (t0 - o)
            np.testing.assert_allclose(t, [expect], atol=1e-12)


def make_head(rng=None, zero=False):
    net = MLP((3, 16, 2), rng=rng)
    if zero:
        net.theta[...] = 0.0
    return GaussianPolicyHead(net=net, action_dim=1, bound=1.0)


class TestPolicyHead:
    def test_zero_noise_gives_squashed_mean(self):
        rng = np.random.default_rng(9)
        head = make_head(rng)
        # force log-std to its lower clamp so the noise term vanishes
        w, b = head.net.layer(1)
        w[:, 1] = 0.0
        b[1] = head.log_std_min - 5.0

        class ZeroRng:
            def standard_normal(self, shape):
                return np.zeros(shape)

        x = np.array([0.2, -0.4, 0.9])
        a, _ = head.sample(x, ZeroRng())
        mean = head.net.forward(x)[0]
        np.testing.assert_allclose(a, [np.tanh(mean)], atol=1e-8)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(17)
        head = make_head(rng)
        x = np.array([0.5, 0.5, -0.2])
        grid = np.linspace(-1 + 1e-6, 1 - 1e-6, 4001)
        xs = np.tile(x, (grid.size, 1))
        logps = head.log_prob(xs, grid[:, None])
        mass = np.trapezoid(np.exp(logps), grid)
        assert abs(mass - 1.0) < 2e-2

    def test_sample_mean_near_zero(self):
        # zero-parameter net: mean 0, log_std 0 -> unit pre-squash std
        head = make_head(zero=True)
        rng = np.random.default_rng(123)
        xs = np.zeros((100_000, 3))
        a, logp = head.sample(xs, rng)
        se = a.std() / np.sqrt(a.size)
        assert abs(a.mean()) < 3 * se
        assert np.all(np.isfinite(logp))

    def test_logp_matches_log_prob_roundtrip(self):
        rng = np.random.default_rng(31)
        head = make_head(rng)
        xs = rng.normal(size=(64, 3))
        a, logp = head.sample(xs, rng)
        recomputed = head.log_prob(xs, a)
        np.testing.assert_allclose(logp, recomputed, atol=1e-6)

    def test_logp_never_minus_inf(self):
        head = make_head(np.random.default_rng(77))
        rng = np.random.default_rng(5)
        xs = rng.normal(size=(1000, 3)) * 5
        _, logp = head.sample(xs, rng)
        assert np.all(logp > -np.inf)

    def test_tape_sample_matches_numpy_path(self):
        rng = np.random.default_rng(13)
        head = make_head(rng)
        xs = rng.normal(size=(8, 3))
        noise = rng.standard_normal((8, 1))

        class FixedRng:
            def __init__(self, n):
                self.n = n

            def standard_normal(self, shape):
                return self.n

        a_np, logp_np = head.sample(xs, FixedRng(noise))
        a_t, logp_t = head.sample_t(xs, noise)
        np.testing.assert_allclose(a_t.data, a_np, atol=1e-12)
        np.testing.assert_allclose(logp_t.data[:, 0], logp_np, atol=1e-12)

    def test_tape_sample_grads_match_fd(self):
        rng = np.random.default_rng(21)
        head = make_head(rng)
        xs = rng.normal(size=(4, 3))
        noise = rng.standard_normal((4, 1))
        net = head.net

        def loss_value():
            a, logp = head.sample_t(xs, noise)
            return ad.mean(ad.add(ad.square(a), logp))

        net.zero_grad()
        loss_value().backward()
        analytic = net.grad.copy()
        h = 1e-6
        fd = np.zeros_like(net.theta)
        for k in range(net.theta.size):
            orig = net.theta[k]
            net.theta[k] = orig + h
            fp = float(loss_value().data)
            net.theta[k] = orig - h
            fm = float(loss_value().data)
            net.theta[k] = orig
            fd[k] = (fp - fm) / (2 * h)
        err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err < 1e-4


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        nets = {
            "policy": MLP((5, 8, 2), rng=rng),
            "q1": MLP((6, 8, 1), hidden_activation="tanh", rng=rng),
        }
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, nets, extra={"alpha": 0.2})
        loaded, extra = load_checkpoint(path)
        assert extra == {"alpha": 0.2}
        for name, net in nets.items():
            assert loaded[name].layer_sizes == net.layer_sizes
            assert loaded[name].hidden_activation == net.hidden_activation
            assert np.array_equal(loaded[name].theta, net.theta)

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_checkpoint(path)
