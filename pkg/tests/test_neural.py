"""Dense-network substrate: forward, gradients, Adam, serialization.

The oracles here are written independently of the module under test:
``_reference_forward`` recomputes layer outputs with plain Python loops,
and ``_fd_gradient`` differentiates that reference numerically. Analytic
gradients from the module must agree with both.
"""

import copy

import numpy as np
import pytest

from raceway import neural
from raceway.exceptions import (
    CheckpointFormatError,
    DimensionMismatchError,
    NonFiniteInputError,
)
from raceway.neural import (
    DenseLayer,
    Mlp,
    adam_step,
    backward,
    check_gradients,
    forward,
    init_adam,
    init_mlp,
    load_mlp,
    param_list,
    read_array_file,
    save_mlp,
    write_array_file,
)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def _reference_forward(net, x_vec):
    """Recompute a forward pass with scalar loops only (no matmul reuse)."""
    h = [float(v) for v in x_vec]
    for layer in net.layers:
        out = []
        for i in range(layer.out_dim):
            z = float(layer.biases[i])
            for j in range(layer.in_dim):
                z += float(layer.weights[i, j]) * h[j]
            if layer.activation == "relu":
                out.append(z if z > 0.0 else 0.0)
            elif layer.activation == "tanh":
                import math
                out.append(math.tanh(z))
            else:
                out.append(z)
        h = out
    return np.array(h)


def _reference_loss(net, x_vec):
    y = _reference_forward(net, x_vec)
    return 0.5 * float(np.sum(y**2))


def _fd_gradient(net, x_vec, array, idx, step=1e-5):
    """Central difference of the reference loss w.r.t. one entry."""
    flat = array.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + step
    up = _reference_loss(net, x_vec)
    flat[idx] = orig - step
    down = _reference_loss(net, x_vec)
    flat[idx] = orig
    return (up - down) / (2.0 * step)


def _small_net(seed, dims=(3, 5, 2), acts=("relu", "tanh")):
    rng = np.random.default_rng(seed)
    return init_mlp(list(dims), list(acts), rng)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_forward_matches_loop_reference_on_random_net():
    net = _small_net(7)
    rng = np.random.default_rng(8)
    for _ in range(5):
        x = rng.uniform(-2, 2, 3)
        y, _ = forward(net, x)
        np.testing.assert_allclose(y, _reference_forward(net, x), rtol=1e-12)


def test_forward_zero_parameters_gives_zero_output():
    layers = [DenseLayer(np.zeros((4, 3)), np.zeros(4), "relu"),
              DenseLayer(np.zeros((2, 4)), np.zeros(2), "linear")]
    y, _ = forward(Mlp(layers), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(y, np.zeros(2))


def test_forward_identity_layer_returns_input():
    net = Mlp([DenseLayer(np.eye(3), np.zeros(3), "linear")])
    x = np.array([0.3, -1.7, 2.5])
    y, _ = forward(net, x)
    np.testing.assert_array_equal(y, x)


def test_forward_batch_agrees_with_single_rows():
    net = _small_net(11)
    rng = np.random.default_rng(12)
    xs = rng.uniform(-1, 1, (6, 3))
    batch_y, _ = forward(net, xs)
    for i in range(6):
        row_y, _ = forward(net, xs[i])
        np.testing.assert_allclose(batch_y[i], row_y, rtol=1e-12, atol=1e-15)


def test_forward_is_deterministic():
    net = _small_net(13)
    x = np.array([0.1, 0.2, 0.3])
    y1, _ = forward(net, x)
    y2, _ = forward(net, x)
    assert y1.tobytes() == y2.tobytes()


def test_tanh_output_layer_bounds_outputs():
    net = _small_net(17, dims=(3, 8, 4), acts=("relu", "tanh"))
    rng = np.random.default_rng(18)
    y, _ = forward(net, rng.uniform(-5, 5, (20, 3)))
    assert np.all(y > -1.0) and np.all(y < 1.0)
    # under extreme saturation the float64 value may round to the limit
    # itself but can never cross it
    for layer in net.layers:
        layer.weights *= 50.0
    y, _ = forward(net, rng.uniform(-5, 5, (20, 3)))
    assert np.all(np.abs(y) <= 1.0)


def test_forward_rejects_wrong_input_size():
    with pytest.raises(DimensionMismatchError):
        forward(_small_net(1), np.zeros(4))


def test_forward_rejects_non_finite_input():
    with pytest.raises(NonFiniteInputError):
        forward(_small_net(1), np.array([0.0, np.nan, 1.0]))


def test_init_mlp_rejects_mismatched_activation_count():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionMismatchError):
        init_mlp([3, 4, 2], ["relu"], rng)


def test_init_mlp_rejects_unknown_activation():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionMismatchError):
        init_mlp([3, 2], ["sigmoid"], rng)


def test_init_mlp_weights_within_fan_in_bound():
    net = init_mlp([9, 4, 1], ["relu", "linear"], np.random.default_rng(3))
    assert np.all(np.abs(net.layers[0].weights) <= 1.0 / 3.0)
    assert np.all(np.abs(net.layers[1].biases) <= 0.5)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_linear_layer_input_gradient_is_w_transpose():
    rng = np.random.default_rng(21)
    w = rng.normal(size=(2, 3))
    net = Mlp([DenseLayer(w, np.zeros(2), "linear")])
    x = rng.normal(size=3)
    dl_dy = rng.normal(size=2)
    _, cache = forward(net, x)
    _, dl_dx = backward(net, cache, dl_dy)
    np.testing.assert_allclose(dl_dx, w.T @ dl_dy, rtol=1e-12)


def test_backward_dead_relu_zeroes_gradients():
    net = Mlp([DenseLayer(-np.ones((4, 3)), -np.ones(4), "relu")])
    x = np.array([1.0, 2.0, 3.0])  # all pre-activations negative
    _, cache = forward(net, x)
    grads, dl_dx = backward(net, cache, np.ones(4))
    assert all(np.all(g == 0.0) for g in grads)
    np.testing.assert_array_equal(dl_dx, np.zeros(3))


def test_backward_param_gradients_match_reference_finite_differences():
    net = _small_net(23)
    x = np.random.default_rng(24).uniform(-1, 1, 3)
    y, cache = forward(net, x)
    grads, dl_dx = backward(net, cache, np.asarray(y))
    for g, p in zip(grads, param_list(net)):
        flat_g = g.reshape(-1)
        for idx in range(p.size):
            numeric = _fd_gradient(net, x, p, idx)
            assert flat_g[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-9)


def test_backward_input_gradient_matches_reference_finite_differences():
    net = _small_net(25)
    x = np.random.default_rng(26).uniform(-1, 1, 3)
    y, cache = forward(net, x)
    _, dl_dx = backward(net, cache, np.asarray(y))
    for idx in range(3):
        numeric = _fd_gradient(net, x, x, idx)
        assert dl_dx[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-9)


def test_backward_without_param_grads_returns_input_gradient_only():
    net = _small_net(27)
    x = np.random.default_rng(28).uniform(-1, 1, 3)
    y, cache = forward(net, x)
    full_grads, dl_dx_full = backward(net, cache, np.asarray(y))
    none_grads, dl_dx_only = backward(net, cache, np.asarray(y),
                                      param_grads=False)
    assert none_grads is None
    assert full_grads is not None
    np.testing.assert_array_equal(dl_dx_full, dl_dx_only)


def test_backward_rejects_mismatched_upstream_gradient():
    net = _small_net(29)
    _, cache = forward(net, np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        backward(net, cache, np.zeros(5))


# ---------------------------------------------------------------------------
# gradient checker
# ---------------------------------------------------------------------------


def test_check_gradients_passes_on_random_net():
    report = check_gradients(_small_net(31), np.array([0.4, -0.9, 1.3]))
    assert report.passed
    assert report.max_rel_error < 1e-4


def test_check_gradients_linear_net_is_exact_to_rounding():
    rng = np.random.default_rng(33)
    net = Mlp([DenseLayer(rng.normal(size=(2, 3)), rng.normal(size=2),
                          "linear")])
    report = check_gradients(net, rng.normal(size=3))
    assert report.max_rel_error < 1e-9


def test_check_gradients_flags_corrupted_bias_gradient(monkeypatch):
    net = _small_net(35)
    true_backward = neural.backward

    def corrupted(n, cache, dl_dy, param_grads=True):
        grads, dl_dx = true_backward(n, cache, dl_dy, param_grads)
        if grads is not None:
            grads[1] = grads[1] + 0.5  # bias gradient of the first layer
        return grads, dl_dx

    monkeypatch.setattr(neural, "backward", corrupted)
    report = neural.check_gradients(net, np.array([0.2, 0.8, -0.5]))
    assert not report.passed
    assert report.per_layer[0] > 1e-4


def test_check_gradients_reports_per_layer_errors():
    report = check_gradients(_small_net(37), np.array([1.0, 0.1, -0.2]))
    assert set(report.per_layer.keys()) == {0, 1}
    assert all(v < 1e-4 for v in report.per_layer.values())


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _reference_scalar_adam(grad_fn, w0, lr, steps,
                           beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam on a single scalar, written without the module."""
    w, m, v = w0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        w -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return w


def test_adam_zero_gradient_leaves_params_and_counts_step():
    params = [np.array([1.0, -2.0]), np.array([[3.0]])]
    opt = init_adam(params, lr=0.5)
    ok = adam_step(params, [np.zeros(2), np.zeros((1, 1))], opt)
    assert ok
    np.testing.assert_array_equal(params[0], [1.0, -2.0])
    np.testing.assert_array_equal(params[1], [[3.0]])
    assert opt.step_count == 1


def test_adam_first_step_magnitude_is_learning_rate():
    params = [np.array([0.0, 0.0, 0.0])]
    opt = init_adam(params, lr=0.01)
    adam_step(params, [np.array([5.0, -0.3, 1e-3])], opt)
    np.testing.assert_allclose(np.abs(params[0]), 0.01, rtol=1e-4)
    assert np.sign(params[0][0]) == -1.0  # descends against the gradient
    assert np.sign(params[0][1]) == +1.0


def test_adam_hundred_steps_on_quadratic_contracts_weight():
    params = [np.array([1.0])]
    opt = init_adam(params, lr=0.1)
    for _ in range(100):
        adam_step(params, [2.0 * params[0]], opt)
    assert abs(params[0][0]) < 0.1


def test_adam_matches_scalar_reference_trajectory():
    params = [np.array([1.0])]
    opt = init_adam(params, lr=0.1)
    for _ in range(37):
        adam_step(params, [2.0 * params[0]], opt)
    expected = _reference_scalar_adam(lambda w: 2.0 * w, 1.0, 0.1, 37)
    assert params[0][0] == pytest.approx(expected, rel=1e-12)


def test_adam_rejects_non_finite_gradients_without_side_effects():
    params = [np.array([1.0, 2.0])]
    opt = init_adam(params, lr=0.1)
    ok = adam_step(params, [np.array([np.nan, 0.0])], opt)
    assert not ok
    np.testing.assert_array_equal(params[0], [1.0, 2.0])
    assert opt.step_count == 0
    assert opt.rejected_steps == 1
    assert np.all(opt.m[0] == 0.0) and np.all(opt.v[0] == 0.0)


def test_adam_rejects_mismatched_shapes():
    params = [np.zeros(3)]
    opt = init_adam(params, lr=0.1)
    with pytest.raises(DimensionMismatchError):
        adam_step(params, [np.zeros(4)], opt)


def test_adam_rejects_mismatched_list_lengths():
    params = [np.zeros(3)]
    opt = init_adam(params, lr=0.1)
    with pytest.raises(DimensionMismatchError):
        adam_step(params, [np.zeros(3), np.zeros(1)], opt)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_mlp_checkpoint_round_trips_bit_exactly(tmp_path):
    net = _small_net(41, dims=(4, 6, 3), acts=("tanh", "linear"))
    path = str(tmp_path / "net.ckpt")
    save_mlp(path, net)
    loaded = load_mlp(path)
    assert len(loaded.layers) == len(net.layers)
    for a, b in zip(net.layers, loaded.layers):
        assert a.activation == b.activation
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.biases.tobytes() == b.biases.tobytes()


def test_mlp_checkpoint_files_are_byte_identical_across_saves(tmp_path):
    net = _small_net(43)
    p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_mlp(p1, net)
    save_mlp(p2, net)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"something else\n{}\n")
    with pytest.raises(CheckpointFormatError):
        read_array_file(str(path))


def test_checkpoint_rejects_truncated_arrays(tmp_path):
    net = _small_net(47)
    path = str(tmp_path / "net.ckpt")
    save_mlp(path, net)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-8])
    with pytest.raises(CheckpointFormatError):
        load_mlp(path)


def test_checkpoint_rejects_trailing_bytes(tmp_path):
    net = _small_net(49)
    path = str(tmp_path / "net.ckpt")
    save_mlp(path, net)
    with open(path, "ab") as fh:
        fh.write(b"x")
    with pytest.raises(CheckpointFormatError):
        load_mlp(path)


def test_checkpoint_rejects_unreadable_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"raceway-net 1\nnot-json\n")
    with pytest.raises(CheckpointFormatError):
        read_array_file(str(path))


def test_checkpoint_rejects_wrong_kind(tmp_path):
    path = str(tmp_path / "w.ckpt")
    write_array_file(path, {"kind": "other"}, [("a", np.zeros(2))])
    with pytest.raises(CheckpointFormatError):
        load_mlp(path)


def test_checkpoint_rejects_shape_disagreement(tmp_path):
    net = _small_net(51)
    path = str(tmp_path / "net.ckpt")
    header = {"kind": "mlp", "net": neural.mlp_header(net)}
    arrays = neural.mlp_arrays(net, "net")
    # swap one weight matrix for a wrong-shaped array
    arrays[0] = (arrays[0][0], np.zeros((1, 1)))
    write_array_file(path, header, arrays)
    with pytest.raises(CheckpointFormatError):
        load_mlp(path)


def test_array_file_preserves_exact_float_bits(tmp_path):
    vals = np.array([np.pi, -0.0, 1e-300, 1.0 + 2**-52])
    path = str(tmp_path / "vals.bin")
    write_array_file(path, {"kind": "test"}, [("v", vals)])
    _, arrays = read_array_file(path)
    assert arrays["v"].tobytes() == vals.tobytes()


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------


def test_param_list_order_is_weights_then_biases_per_layer():
    net = _small_net(53)
    params = param_list(net)
    assert params[0] is net.layers[0].weights
    assert params[1] is net.layers[0].biases
    assert params[2] is net.layers[1].weights
    assert params[3] is net.layers[1].biases


def test_adam_updates_do_not_alias_between_nets():
    net1 = _small_net(55)
    net2 = copy.deepcopy(net1)
    opt = init_adam(param_list(net1), lr=0.1)
    grads = [np.ones_like(p) for p in param_list(net1)]
    adam_step(param_list(net1), grads, opt)
    assert not np.array_equal(net1.layers[0].weights, net2.layers[0].weights)
