import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointts.errors import NumericError, ShapeError, StateError
from jointts.numerics import (IDENTITY, MLP, RELU, AdamState, DenseLayer, GradientTape,
                              adam_step, dense_forward, finite_diff_check, glorot_uniform)


def test_dense_identity():
    layer = DenseLayer(np.eye(2), np.zeros(2), IDENTITY)
    np.testing.assert_array_equal(dense_forward(layer, np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_dense_relu_sign_split():
    layer = DenseLayer(np.array([[1.0], [-1.0]]), np.zeros(2), RELU)
    np.testing.assert_array_equal(dense_forward(layer, np.array([[3.0]])), [[3.0, 0.0]])


def test_dense_hand_matmul():
    layer = DenseLayer(np.array([[2.0, 0.0], [0.0, 3.0]]), np.ones(2), IDENTITY)
    np.testing.assert_array_equal(dense_forward(layer, np.array([[1.0, 1.0]])), [[3.0, 4.0]])


def test_dense_shape_error_names_shapes():
    layer = DenseLayer(np.zeros((3, 2)), np.zeros(3), IDENTITY)
    with pytest.raises(ShapeError, match=r"\(3, 2\).*\(1, 5\)|\(1, 5\).*\(3, 2\)"):
        dense_forward(layer, np.zeros((1, 5)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_identity_layer_is_affine(seed, n_in, n_out):
    r = np.random.default_rng(seed)
    layer = DenseLayer(r.normal(size=(n_out, n_in)), r.normal(size=n_out), IDENTITY)
    x, y = r.normal(size=(4, n_in)), r.normal(size=(4, n_in))
    f = lambda a: dense_forward(layer, a)
    np.testing.assert_allclose(f(x + y) - f(x) - f(y) + f(np.zeros_like(x)), 0.0, atol=1e-10)


def test_glorot_bounds(rng):
    w = glorot_uniform(30, 20, rng)
    assert w.shape == (20, 30) and w.dtype == np.float64
    assert np.abs(w).max() <= np.sqrt(6 / 50)


def test_constant_loss_gives_zero_grads(rng):
    net = MLP.init(3, [4], 2, rng)
    _, cache = net.forward(rng.normal(size=(5, 3)))
    tape = GradientTape()
    net.backward(cache, np.zeros((5, 2)), tape, "n.")
    for g in tape.grads.values():
        assert not g.any()


def test_linear_layer_sum_gradient_is_broadcast_input():
    x = np.array([[1.0, -2.0, 0.5]])
    net = MLP([DenseLayer(np.ones((2, 3)), np.zeros(2), IDENTITY)])
    _, cache = net.forward(x)
    tape = GradientTape()
    net.backward(cache, np.ones((1, 2)), tape, "n.")
    np.testing.assert_array_equal(tape["n.0.weight"], np.vstack([x, x]))
    np.testing.assert_array_equal(tape["n.0.bias"], [1.0, 1.0])


def test_backward_without_forward():
    net = MLP.init(2, [], 1, np.random.default_rng(0))
    with pytest.raises(StateError):
        net.backward(None, np.ones((1, 1)), GradientTape(), "n.")


def _mlp_check(seed, hidden, tol=1e-4):
    r = np.random.default_rng(seed)
    net = MLP.init(4, hidden, 3, r)
    for layer in net.layers:  # nonzero biases keep pre-activations off the ReLU kink
        layer.bias = r.normal(size=layer.bias.shape)
    x = r.normal(size=(6, 4))
    target = r.normal(size=(6, 3))
    mask = (r.random((6, 3)) < 0.7).astype(float)
    params = net.parameters("n.")

    def loss():
        out, _ = net.forward(x)
        return float(np.sum(mask * (out - target) ** 2))

    out, cache = net.forward(x)
    tape = GradientTape()
    net.backward(cache, 2 * mask * (out - target), tape, "n.")
    return params, loss, tape.grads, finite_diff_check(params, loss, tape.grads, tol)


def test_two_layer_relu_gradcheck_seed0():
    assert _mlp_check(0, [5])[3].passed


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 6), max_size=2))
def test_gradcheck_random_configs(seed, hidden):
    report = _mlp_check(seed, hidden)[3]
    assert report.passed, report


def test_zero_weight_quadratic_passes_tight():
    net = MLP([DenseLayer(np.zeros((2, 3)), np.zeros(2), IDENTITY)])
    x = np.array([[1.0, 2.0, 3.0]])
    params = net.parameters("n.")

    def loss():
        return float(np.sum(net.forward(x)[0] ** 2))

    out, cache = net.forward(x)
    tape = GradientTape()
    net.backward(cache, 2 * out, tape, "n.")
    assert finite_diff_check(params, loss, tape.grads, tolerance=1e-6).passed


def test_corrupted_gradient_fails():
    params, loss, grads, _ = _mlp_check(0, [5])
    bad = {k: v.copy() for k, v in grads.items()}
    bad["n.0.weight"].flat[0] += 1.0
    report = finite_diff_check(params, loss, bad)
    assert not report.passed and report.worst_parameter == "n.0.weight"


def test_gradcheck_restores_parameters():
    params, loss, grads, _ = _mlp_check(3, [4])
    before = {k: v.copy() for k, v in params.items()}
    finite_diff_check(params, loss, grads)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


def test_adam_zero_grad_fixed_point():
    p = {"w": np.array([1.5, -2.0])}
    new, st_ = adam_step(AdamState(), p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(new["w"], p["w"])
    assert st_.step == 1


@pytest.mark.parametrize("g", [3.0, -0.2, 1e-3])
def test_adam_first_step_is_lr_sign(g):
    new, _ = adam_step(AdamState(lr=0.01), {"w": np.array(1.0)}, {"w": np.array(g)})
    assert new["w"] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-7)


def test_adam_two_steps_scalar_recurrence():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 2.0, 0.0, 0.0
    state, params = AdamState(lr, b1, b2, eps), {"w": np.array(2.0)}
    for t in (1, 2):
        g = 2 * w  # d/dw of w**2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        params, state = adam_step(state, params, {"w": 2 * params["w"]})
    assert float(params["w"]) == w
    assert state.step == 2


def test_adam_nan_raises():
    with pytest.raises(NumericError):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])})


def test_adam_deterministic():
    r = np.random.default_rng(5)
    p = {"a": r.normal(size=(3, 2))}
    g = {"a": r.normal(size=(3, 2))}
    a1, _ = adam_step(AdamState(), p, g)
    a2, _ = adam_step(AdamState(), p, g)
    assert a1["a"].tobytes() == a2["a"].tobytes()
