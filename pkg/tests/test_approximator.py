import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from e2c.approximator import (
    Adam, DenseNet, PolicyNet, RecurrentCell, categorical_entropy, entropy_grads,
    load_checkpoint, log_prob, log_prob_grads, sample_action, save_checkpoint,
)
from e2c.errors import ConfigError, NumericError, UsageError


def central_diff(f, params, h=1e-5):
    g = np.zeros_like(params)
    for k in range(params.size):
        old = params[k]
        params[k] = old + h
        up = f()
        params[k] = old - h
        down = f()
        params[k] = old
        g[k] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b)))


def test_param_count_matches_layer_sum():
    net = DenseNet([5, 128, 128, 3])
    assert net.n_params == (5 * 128 + 128) + (128 * 128 + 128) + (128 * 3 + 3)
    g = DenseNet([5, 16, 2], head="gaussian")
    assert g.n_params == 5 * 16 + 16 + 16 * 2 + 2 + 2


def test_zero_params_zero_output():
    net = DenseNet([3, 4, 2])
    assert np.all(net.forward(np.array([1.0, -2.0, 3.0])) == 0.0)


def test_identity_layer():
    net = DenseNet([3, 3])
    net.weights[0][...] = np.eye(3)
    x = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(net.forward(x), x)


def test_forward_matches_hand_rolled_oracle():
    rng = np.random.default_rng(7)
    net = DenseNet([2, 3, 1], rng=rng)
    net.params[:] = rng.standard_normal(net.n_params)
    x = [0.5, -0.5]
    w1, b1, w2, b2 = net.weights[0], net.biases[0], net.weights[1], net.biases[1]
    hidden = []
    for j in range(3):
        s = b1[j]
        for i in range(2):
            s += x[i] * w1[i, j]
        hidden.append(max(s, 0.0))
    out = b2[0] + sum(hidden[j] * w2[j, 0] for j in range(3))
    assert abs(net.forward(np.array(x))[0] - out) < 1e-12


def test_dimension_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        DenseNet([3, 2]).forward(np.zeros(4))


def test_backward_without_forward():
    with pytest.raises(UsageError):
        DenseNet([3, 2]).backward(np.zeros(2))


def test_constant_loss_zero_gradient():
    net = DenseNet([3, 5, 2], rng=np.random.default_rng(0))
    net.forward(np.ones(3))
    assert np.all(net.backward(np.zeros(2)) == 0.0)


def test_scalar_linear_gradient():
    net = DenseNet([1, 1])
    net.weights[0][0, 0] = 0.7
    net.forward(np.array([2.0]))
    grad = net.backward(np.array([1.0]))
    assert grad[0] == 2.0 and grad[1] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_dense_gradient_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = DenseNet([4, 8, 8, 2], rng=rng)
    net.params += 0.1 * rng.standard_normal(net.n_params)
    x = rng.standard_normal((6, 4))
    c = rng.standard_normal((6, 2))

    def loss():
        return float(np.sum(c * net.forward(x)))

    net.forward(x)
    analytic = net.backward(c)
    assert rel_err(analytic, central_diff(loss, net.params)) < 1e-4


def test_gaussian_head_log_std_gradient():
    rng = np.random.default_rng(3)
    net = DenseNet([3, 6, 2], head="gaussian", rng=rng, log_std_init=-0.3)
    x = rng.standard_normal((5, 3))
    a = rng.standard_normal((5, 2))

    def loss():
        return float(log_prob("gaussian", net.forward(x), a, net.log_std).sum())

    mean = net.forward(x)
    g_mean, g_ls = log_prob_grads("gaussian", mean, a, net.log_std)
    analytic = net.backward(g_mean, g_ls)
    assert rel_err(analytic, central_diff(loss, net.params)) < 1e-4


def test_categorical_log_prob_and_entropy_grads():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((4, 5))
    acts = rng.integers(0, 5, size=4)
    g, _ = log_prob_grads("categorical", logits, acts)
    fd = central_diff(lambda: float(log_prob("categorical", logits, acts).sum()), logits.reshape(-1))
    assert np.allclose(g.ravel(), fd, atol=1e-8)
    ge, _ = entropy_grads("categorical", logits)
    fd = central_diff(lambda: float(categorical_entropy(logits).sum()), logits.reshape(-1))
    assert np.allclose(ge.ravel(), fd, atol=1e-8)


def test_gru_single_step_gradient():
    rng = np.random.default_rng(5)
    cell = RecurrentCell(3, 4, rng=rng)
    x, h = rng.standard_normal((2, 3)), rng.standard_normal((2, 4))
    c = rng.standard_normal((2, 4))

    def loss():
        return float(np.sum(c * cell.forward(x, h)[0]))

    cell.forward(x, h)
    analytic = cell.backward(c)
    assert rel_err(analytic, central_diff(loss, cell.params)) < 1e-4


def test_gru_sequence_gradient_with_resets():
    rng = np.random.default_rng(6)
    cell = RecurrentCell(3, 4, rng=rng)
    xs = rng.standard_normal((5, 2, 3))
    resets = np.zeros((5, 2))
    resets[3, 1] = 1.0
    c = rng.standard_normal((5, 2, 4))

    def loss():
        return float(np.sum(c * cell.forward_sequence(xs, resets=resets)))

    cell.forward_sequence(xs, resets=resets)
    analytic = cell.backward_sequence(c)
    assert rel_err(analytic, central_diff(loss, cell.params)) < 1e-4


def test_gru_state_resets_and_determinism():
    rng = np.random.default_rng(8)
    cell = RecurrentCell(2, 3, rng=rng)
    assert np.all(cell.initial_state() == 0.0)
    xs = rng.standard_normal((10, 1, 2))
    a = cell.forward_sequence(xs)
    h, replay = cell.initial_state(1), []
    for t in range(10):
        h, _ = cell.forward(xs[t], h)
        replay.append(h)
    assert np.array_equal(a, np.stack(replay))
    assert np.array_equal(cell.forward_sequence(xs), a)


def test_recurrent_policy_gradient():
    rng = np.random.default_rng(9)
    net = PolicyNet(3, 4, hidden=(5,), head="categorical", gru_hidden=4, rng=rng, out_gain=1.0)
    xs = rng.standard_normal((4, 2, 3))
    acts = rng.integers(0, 4, size=(4, 2))

    def loss():
        return float(log_prob("categorical", net.forward(xs), acts).sum())

    out = net.forward(xs)
    g, _ = log_prob_grads("categorical", out, acts)
    analytic = net.backward(g)
    assert rel_err(analytic, central_diff(loss, net.params)) < 1e-4


def test_adam_zero_gradient_no_move():
    p = np.array([1.0, -2.0])
    Adam(2).step(p, np.zeros(2))
    assert np.array_equal(p, [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = np.zeros(1)
    Adam(1, lr=1e-3).step(p, np.ones(1))
    # m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps)
    assert abs(p[0] + 1e-3 / (1 + 1e-8)) < 1e-15


def test_adam_constant_gradient_monotone():
    p = np.array([0.0, 0.0])
    opt = Adam(2, lr=1e-2)
    prev = p.copy()
    for _ in range(50):
        opt.step(p, np.array([1.0, -3.0]))
        assert p[0] < prev[0] and p[1] > prev[1]
        prev = p.copy()
    assert opt.t == 50


def test_adam_rejects_non_finite():
    p = np.zeros(2)
    opt = Adam(2)
    with pytest.raises(NumericError):
        opt.step(p, np.array([np.nan, 0.0]))
    assert opt.t == 0 and np.all(p == 0)


def test_sample_action_examples():
    rng = np.random.default_rng(0)
    _, _, ent = sample_action(np.zeros(4), "categorical", rng=rng)
    assert abs(ent - math.log(4)) < 1e-15
    for _ in range(20):
        a, _, _ = sample_action(np.array([0.0, 10.0]), "categorical", "greedy")
        assert a == 1
    a, lp, _ = sample_action(np.zeros(1), "gaussian", "greedy", log_std=np.zeros(1))
    assert a[0] == 0.0 and abs(lp + 0.5 * math.log(2 * math.pi)) < 1e-15


def test_sampled_log_prob_is_exact_mass():
    rng = np.random.default_rng(1)
    logits = np.array([[0.2, -1.0, 2.0]] * 4000)
    a, lp, _ = sample_action(logits, "categorical", rng=rng)
    p = np.exp(logits[0] - logits[0].max())
    p /= p.sum()
    assert np.allclose(lp, np.log(p[a]))
    assert np.allclose(np.bincount(a, minlength=3) / 4000, p, atol=0.03)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=6))
def test_categorical_entropy_bounds(logits):
    h = categorical_entropy(np.array(logits))
    assert -1e-12 <= h <= math.log(len(logits)) + 1e-12


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"actor": np.arange(5.0), "critic/w": np.ones((2, 3)) * 0.25}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, arrays, {"variant": "e2c"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"variant": "e2c"}
    assert list(loaded) == list(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])
    raw = path.read_bytes()
    assert raw[:8] == b"E2CCKPT\x00"
    assert raw[-8:] == np.float64(0.25).astype("<f8").tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"nope" * 10)
    with pytest.raises(ConfigError):
        load_checkpoint(path)
