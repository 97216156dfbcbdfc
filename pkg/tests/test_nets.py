import numpy as np
import pytest

from huvfa.nets import (FeatureCodec, StreamNet, TrainConfig, backward, forward, load_weights,
                        mse_loss, save_weights, train_stream, vjp)


def _net(n_in, n_out, seed=0, hidden=128):
    return StreamNet(hidden=hidden).initialize(n_in, n_out, np.random.default_rng(seed))


def _params(net):
    return [net.coefs_[0], net.intercepts_[0], net.coefs_[1], net.intercepts_[1]]


def numeric_grads(net, X, T, h=1e-5):
    grads = []
    for p in _params(net):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = mse_loss(forward(net, X), T)
            p[idx] = old - h
            down = mse_loss(forward(net, X), T)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_gap(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


class TestForward:
    def test_zero_net(self):
        net = _net(2, 5)
        for p in _params(net):
            p[...] = 0.0
        assert not forward(net, [0.3, 0.7]).any()

    def test_single_path(self):
        net = _net(1, 1, hidden=1)
        net.coefs_[0][...] = 2.0
        net.intercepts_[0][...] = 0.0
        net.coefs_[1][...] = 3.0
        net.intercepts_[1][...] = 0.0
        assert forward(net, [0.5])[0] == pytest.approx(3.0)

    def test_independent_evaluator(self):
        rng = np.random.default_rng(1)
        net = _net(4, 7, seed=2)
        x = rng.random(4)
        W1, b1, W2, b2 = _params(net)
        hidden = [max(0.0, sum(x[i] * W1[i, j] for i in range(4)) + b1[j]) for j in range(128)]
        out = [sum(hidden[j] * W2[j, k] for j in range(128)) + b2[k] for k in range(7)]
        np.testing.assert_allclose(forward(net, x), out, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(_net(2, 3), [0.1, 0.2, 0.3])


class TestGradients:
    def test_perfect_prediction(self):
        net = _net(2, 3)
        X = np.random.default_rng(0).random((4, 2))
        loss, grads = backward(net, X, forward(net, X))
        assert loss == 0.0
        assert all(not g.any() for g in grads)

    def test_loss_quadratic(self):
        assert mse_loss([2.0], [0.0]) == 4 * mse_loss([1.0], [0.0])

    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        for i in range(10):
            n_in, n_out = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            net = _net(n_in, n_out, seed=i, hidden=16)
            X = rng.random((3, n_in))
            T = rng.normal(size=(3, n_out))
            _, grads = backward(net, X, T)
            for a, n in zip(grads, numeric_grads(net, X, T)):
                assert relative_gap(a, n) <= 1e-4

    def test_vjp_matches_backward(self):
        rng = np.random.default_rng(4)
        net = _net(3, 4, seed=5)
        X, T = rng.random((6, 3)), rng.random((6, 4))
        _, grads = backward(net, X, T)
        d_out = 2.0 * (forward(net, X) - T) / T.size
        for a, b in zip(grads, vjp(net, X, d_out)):
            np.testing.assert_allclose(a, b, atol=1e-14)


class TestTraining:
    def test_single_sample_memorised(self):
        net = StreamNet(lr=0.05, batch_size=1, epochs=300)
        _, losses = train_stream(net, [[0.2, 0.4]], [[0.5, -1.0, 2.0]])
        assert losses[-1] <= 1e-4

    def test_option_stream_table(self):
        codec = FeatureCodec()
        X = codec.option(range(4))
        Y = np.random.default_rng(0).normal(size=(4, 10))
        net = StreamNet(lr=0.05, batch_size=2, epochs=500)
        _, losses = train_stream(net, X, Y)
        assert losses[-1] <= 1e-3

    def test_loss_trace_on_factor_rows(self, world):
        from huvfa.horde import Horde, build_full_tensors
        from huvfa.tabular import LearnerConfig, train_goal
        from huvfa.tensor import balance_scales, cp_als
        goals = [(2, 2), (9, 2), (2, 9), (4, 1), (10, 5)]
        cfg = LearnerConfig(episodes=20_000)
        horde = Horde(goals, [train_goal(world, g, cfg, np.random.default_rng(i))
                              for i, g in enumerate(goals)])
        qo, _ = build_full_tensors(world, horde)
        cp = balance_scales(cp_als(qo, 8, max_iters=100))
        X = FeatureCodec().state(world.states)
        net = StreamNet(lr=0.05, batch_size=16, epochs=500)
        _, losses = train_stream(net, X, cp.factors[0])
        # SGD jitters from epoch to epoch; the trend is judged on 50-epoch means
        blocks = np.asarray(losses).reshape(-1, 50).mean(axis=1)
        assert np.all(blocks[1:] <= 1.1 * blocks[:-1])
        assert blocks[-1] < blocks[0]

    def test_deterministic(self):
        X = np.random.default_rng(0).random((20, 2))
        Y = np.random.default_rng(1).random((20, 3))
        a = StreamNet(epochs=5, random_state=3).fit(X, Y)
        b = StreamNet(epochs=5, random_state=3).fit(X, Y)
        for p, q in zip(_params(a), _params(b)):
            assert np.array_equal(p, q)

    def test_config_applied(self):
        net = StreamNet()
        train_stream(net, [[0.1, 0.2]], [[1.0]], TrainConfig(lr=0.01, epochs=3))
        assert net.lr == 0.01 and len(net.loss_curve_) == 3

    def test_empty(self):
        with pytest.raises(ValueError):
            train_stream(StreamNet(), np.zeros((0, 2)), np.zeros((0, 3)))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_state_goal=0)


class TestCodec:
    def test_injective(self, world):
        codec = FeatureCodec()
        feats = codec.state(world.states)
        assert len({tuple(r) for r in feats}) == world.n_states
        assert feats.min() >= 0 and feats.max() <= 1
        assert len({tuple(r) for r in codec.option(range(4))}) == 4
        assert len({tuple(r) for r in codec.action(range(4))}) == 4

    def test_values(self):
        codec = FeatureCodec()
        np.testing.assert_allclose(codec.goal([(6, 12)]), [[0.5, 1.0]])
        np.testing.assert_array_equal(codec.action([2]), [[0, 0, 1, 0]])

    def test_joint(self):
        codec = FeatureCodec()
        f = codec.encode("state+option", [((12, 0), 1)])
        np.testing.assert_allclose(f, [[1.0, 0.0, 0, 1, 0, 0]])
        assert codec.width("state+option+action") == 10


def test_weight_file_round_trip(tmp_path):
    net = _net(3, 5, seed=7)
    net.random_state = 7
    save_weights(tmp_path / "w.bin", net)
    back = load_weights(tmp_path / "w.bin")
    for p, q in zip(_params(net), _params(back)):
        assert np.array_equal(p, q)
    assert back.random_state == 7
    raw = (tmp_path / "w.bin").read_bytes()
    assert raw[:4] == b"SNWB"
    assert len(raw) == 28 + 8 * net.n_parameters()
