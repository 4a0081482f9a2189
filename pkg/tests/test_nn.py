import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gas_sim.errors import NonFinite, ShapeMismatch
from gas_sim.nn import (
    IDENTITY,
    RELU,
    DenseLayer,
    finite_diff_grad,
    flat_grads,
    init_mlp,
    layer_params,
    mlp_backward,
    mlp_forward,
    sgd_step,
    with_params,
)


def naive_forward(layers, x):
    """Triple-loop matmul, left-to-right sums."""
    h = [list(map(float, row)) for row in x]
    for layer in layers:
        w, b = layer.weights, layer.bias
        out = []
        for row in h:
            o = []
            for j in range(w.shape[1]):
                s = 0.0
                for i in range(w.shape[0]):
                    s += row[i] * w[i, j]
                s += b[j]
                o.append(max(s, 0.0) if layer.activation == RELU else s)
            out.append(o)
        h = out
    return np.array(h)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)


def test_identity_layer_passes_input_through():
    x = np.array([[1.5, -2.0, 3.0]])
    out, _ = mlp_forward([DenseLayer(np.eye(3), np.zeros(3), IDENTITY)], x)
    assert np.array_equal(out, x)


def test_relu_layer_clips_negatives():
    out, _ = mlp_forward([DenseLayer(np.eye(2), np.zeros(2), RELU)], np.array([[-1.0, 2.0]]))
    assert out.tolist() == [[0.0, 2.0]]


def test_two_layer_forward_matches_naive_matmul():
    rng = np.random.default_rng(0)
    layers = init_mlp([5, 7, 3], rng)
    x = rng.standard_normal((4, 5))
    out, _ = mlp_forward(layers, x)
    assert np.max(np.abs(out - naive_forward(layers, x))) <= 1e-12


def test_forward_rejects_wrong_width():
    layers = init_mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        mlp_forward(layers, np.zeros((2, 4)))


def test_forward_flags_non_finite():
    layer = DenseLayer(np.array([[np.inf]]), np.zeros(1))
    with pytest.raises(NonFinite):
        mlp_forward([layer], np.ones((1, 1)))


def test_identity_backward_is_g_times_w_transpose():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((3, 2))
    layers = [DenseLayer(w, np.zeros(2))]
    _, caches = mlp_forward(layers, rng.standard_normal((4, 3)))
    g = rng.standard_normal((4, 2))
    gin, _ = mlp_backward(layers, caches, g)
    assert np.allclose(gin, g @ w.T, atol=0, rtol=0)
    eye = [DenseLayer(np.eye(2), np.zeros(2))]
    _, c2 = mlp_forward(eye, np.ones((4, 2)))
    assert np.array_equal(mlp_backward(eye, c2, g)[0], g)


def test_relu_gate_blocks_gradient():
    layers = [DenseLayer(np.eye(2), np.zeros(2), RELU)]
    _, caches = mlp_forward(layers, np.array([[-1.0, 2.0]]))
    gin, grads = mlp_backward(layers, caches, np.array([[5.0, 7.0]]))
    assert gin[0, 0] == 0.0 and gin[0, 1] == 7.0
    assert grads[0][1][0] == 0.0


def _loss_through(layers, x, direction):
    def f(params):
        out, _ = mlp_forward(with_params(layers, params), x)
        return float(np.sum(out * direction))
    return f


def test_backward_matches_finite_differences_seed0():
    rng = np.random.default_rng(0)
    layers = init_mlp([4, 6, 3], rng)
    for layer in layers:
        layer.bias[:] = rng.standard_normal(layer.out_dim) * 0.1
    x = rng.standard_normal((5, 4))
    direction = rng.standard_normal((5, 3))
    _, caches = mlp_forward(layers, x)
    _, grads = mlp_backward(layers, caches, direction)
    numeric = finite_diff_grad(_loss_through(layers, x, direction), layer_params(layers), 1e-5)
    for a, n in zip(flat_grads(grads), numeric):
        mask = np.abs(a) > 1e-8
        assert np.all(rel_err(a[mask], n[mask]) <= 1e-4)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 3), batch=st.integers(1, 4))
def test_backward_agrees_with_finite_differences(seed, depth, batch):
    rng = np.random.default_rng(seed)
    widths = [int(w) for w in rng.integers(1, 5, size=depth + 1)]
    layers = init_mlp(widths, rng)
    for layer in layers:
        layer.bias[:] = rng.standard_normal(layer.out_dim) * 0.3
    x = rng.standard_normal((batch, widths[0]))
    direction = rng.standard_normal((batch, widths[-1]))
    _, caches = mlp_forward(layers, x)
    # finite differences are meaningless across a ReLU kink
    if any(np.any(np.abs(c.pre_activation) < 1e-4) for c in caches):
        return
    _, grads = mlp_backward(layers, caches, direction)
    numeric = finite_diff_grad(_loss_through(layers, x, direction), layer_params(layers), 1e-5)
    for a, n in zip(flat_grads(grads), numeric):
        mask = np.abs(a) > 1e-8
        assert np.all(rel_err(a[mask], n[mask]) <= 1e-4)


def test_forward_is_row_independent():
    rng = np.random.default_rng(3)
    layers = init_mlp([3, 5, 2], rng)
    x = rng.standard_normal((6, 3))
    perm = rng.permutation(6)
    out, _ = mlp_forward(layers, x)
    out_p, _ = mlp_forward(layers, x[perm])
    assert np.allclose(out[perm], out_p, rtol=0, atol=1e-15)


def test_forward_backward_bitwise_deterministic():
    rng = np.random.default_rng(4)
    layers = init_mlp([6, 8, 4], rng)
    x = rng.standard_normal((10, 6))
    g = rng.standard_normal((10, 4))
    runs = []
    for _ in range(2):
        out, caches = mlp_forward(layers, x)
        gin, grads = mlp_backward(layers, caches, g)
        runs.append([out, gin] + flat_grads(grads))
    for a, b in zip(*runs):
        assert a.tobytes() == b.tobytes()


def test_sgd_zero_grad_is_noop():
    p = [np.array([1.0, 2.0]), np.array([[3.0]])]
    out = sgd_step(p, [np.zeros(2), np.zeros((1, 1))], 0.1)
    assert all(np.array_equal(a, b) for a, b in zip(p, out))


def test_sgd_single_value():
    out = sgd_step([np.array([1.0])], [np.array([0.5])], 0.01)
    assert out[0][0] == 0.995


def test_sgd_matches_elementwise_loop():
    rng = np.random.default_rng(0)
    layers = init_mlp([4, 5, 3], rng)
    params = layer_params(layers)
    grads = [rng.standard_normal(p.shape) for p in params]
    out = sgd_step(params, grads, 0.03)
    for p, g, o in zip(params, grads, out):
        expect = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            expect[idx] = p[idx] - 0.03 * g[idx]
        assert np.array_equal(o, expect)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)


def test_finite_diff_quadratic_and_constant():
    g = finite_diff_grad(lambda p: float(p[0][0] ** 2), [np.array([3.0])], 1e-5)
    assert abs(g[0][0] - 6.0) <= 1e-6
    z = finite_diff_grad(lambda p: 4.2, [np.ones((2, 2))], 1e-5)
    assert np.all(np.abs(z[0]) <= 1e-9)


def test_init_uses_glorot_bounds():
    layers = init_mlp([10, 30], np.random.default_rng(0))
    assert np.max(np.abs(layers[0].weights)) <= np.sqrt(6 / 40)
    assert layers[0].activation == IDENTITY
