import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdm.core.matching import gradient_penalty_term
from lsdm.harness.verify import _fd_grad, gradient_rel_err, min_preactivation, random_small_mlp
from lsdm.nn import (
    AdamState,
    EmaState,
    Network,
    Tensor,
    adam_step,
    backward_grads,
    build_mlp,
    ema_update,
    forward,
    grad,
    input_gradient_node,
    lipschitz_upper_bound,
    lr_schedule_value,
    spectral_norm,
)
from lsdm.nn import autograd as T
from lsdm.rng import Rng


def _linear_net(w, b, act="linear"):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    net = Network([w.shape[1], w.shape[0]], [act])
    net.weights.append(Tensor(w, requires_grad=True))
    net.biases.append(Tensor(np.asarray(b, dtype=float), requires_grad=True))
    return net


# build_mlp

def test_parameter_count_small():
    net = build_mlp([2, 3, 1], "relu", Rng(0))
    assert net.num_parameters() == 13
    assert net.depth == 2


@given(st.lists(st.integers(1, 6), min_size=2, max_size=5))
@settings(max_examples=30, deadline=None)
def test_parameter_count_and_output_shape(dims):
    net = build_mlp(dims, "tanh", Rng(1))
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    assert net.num_parameters() == expected
    out = net.predict(np.zeros((4, dims[0])))
    assert out.shape == (4, dims[-1])


def test_identity_init_is_identity():
    net = build_mlp([5, 5], ["linear"], Rng(0), init="identity")
    x = Rng(3).normal(size=(7, 5))
    np.testing.assert_array_equal(net.predict(x), x)


def test_he_init_variance():
    variances = [np.var(build_mlp([64, 64], ["relu"], Rng(7).child(str(s))).weights[0].data) for s in range(10)]
    for v in variances:
        assert 1.6 / 64 <= v <= 2.4 / 64


def test_xavier_bounds_and_zero_bias():
    net = build_mlp([10, 20, 3], "tanh", Rng(2))
    a = np.sqrt(6.0 / 30.0)
    assert np.abs(net.weights[0].data).max() <= a
    assert all(np.all(b.data == 0) for b in net.biases)


def test_build_rejects_bad_dims():
    with pytest.raises(ValueError):
        build_mlp([3], "relu", Rng(0))
    with pytest.raises(ValueError):
        build_mlp([3, 0, 1], "relu", Rng(0))
    with pytest.raises(ValueError):
        build_mlp([2, 2], ["swish"], Rng(0))


# forward

def test_relu_values():
    out = T.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_single_linear_layer():
    net = _linear_net([[2.0]], [1.0])
    assert net.predict(np.array([[3.0]]))[0, 0] == 7.0


def test_forward_deterministic():
    net = build_mlp([3, 8, 8, 2], "leaky_relu(0.2)", Rng(5))
    x = Rng(6).normal(size=(10, 3))
    np.testing.assert_array_equal(net.predict(x), net.predict(x))


def test_forward_rejects_wrong_width_and_nan():
    net = build_mlp([3, 2], ["linear"], Rng(0))
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 4)))
    with pytest.raises(FloatingPointError):
        forward(net, np.array([[np.nan, 0.0, 0.0]]))


# backward

def test_square_gradient():
    x = Tensor(np.array(3.0), requires_grad=True)
    (g,) = grad(x * x, [x])
    assert g.data == 6.0


@pytest.mark.parametrize("value, expected", [(-1.0, 0.0), (2.0, 1.0), (0.0, 0.0)])
def test_relu_subgradient(value, expected):
    x = Tensor(np.array(value), requires_grad=True)
    (g,) = grad(T.relu(x), [x])
    assert g.data == expected


def test_backward_grads_requires_scalar_and_connection():
    net = build_mlp([2, 1], ["linear"], Rng(0))
    with pytest.raises(ValueError):
        backward_grads(net(Tensor(np.ones((3, 2)))), net.parameters())
    with pytest.raises(ValueError):
        backward_grads(Tensor(np.array(1.0)), net.parameters())


def test_unused_parameter_gets_zero_gradient():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([5.0]), requires_grad=True)
    ga, gb = backward_grads((a * a).sum(), [a, b])
    np.testing.assert_array_equal(ga, [2.0, 4.0])
    np.testing.assert_array_equal(gb, [0.0])


@pytest.mark.parametrize("seed", range(10))
def test_mlp_gradient_matches_finite_differences(seed):
    r = Rng(100).child(str(seed))
    net, dims = random_small_mlp(r)
    x = r.normal(size=(5, dims[0]))
    y = r.normal(size=(5, dims[-1]))
    params = net.parameters()

    def loss():
        d = net(Tensor(x)) - y
        return (d * d).mean()

    ad = backward_grads(loss(), params)
    fd = _fd_grad(lambda: loss().item(), params, h=1e-5)
    assert gradient_rel_err(ad, fd) <= 1e-5


def test_elementwise_ops_gradients():
    r = Rng(9)
    x0 = r.uniform(0.5, 2.0, size=(3, 4))
    ops = [T.exp, T.log, T.sqrt, T.tanh, T.sigmoid, T.softplus, lambda t: t ** 3.0, lambda t: 1.0 / t]
    for op in ops:
        x = Tensor(x0.copy(), requires_grad=True)
        ad = backward_grads(op(x).sum(), [x])
        fd = _fd_grad(lambda: float(op(Tensor(x.data)).data.sum()), [x])
        assert gradient_rel_err(ad, fd) <= 1e-6


def test_broadcast_and_matmul_gradients():
    r = Rng(10)
    a = Tensor(r.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(r.normal(size=(3,)), requires_grad=True)
    w = Tensor(r.normal(size=(3, 2)), requires_grad=True)

    def loss():
        h = (a + b) @ w
        return (h * h).mean() + T.concat([a, a * 2.0], axis=1)[1:, ::2].sum()

    ad = backward_grads(loss(), [a, b, w])
    fd = _fd_grad(lambda: loss().item(), [a, b, w])
    assert gradient_rel_err(ad, fd) <= 1e-6


def test_gradient_linearity():
    r = Rng(11)
    net = build_mlp([3, 5, 1], "tanh", r)
    x = r.normal(size=(6, 3))
    params = net.parameters()
    l1 = net(Tensor(x)).mean()
    l2 = (net(Tensor(x)) ** 2.0).mean()
    combo = backward_grads(l1 * 2.5 + l2 * -0.75, params)
    g1 = backward_grads(l1, params)
    g2 = backward_grads(l2, params)
    for c, a, b in zip(combo, g1, g2):
        np.testing.assert_allclose(c, 2.5 * a - 0.75 * b, rtol=0, atol=1e-14)


def test_row_norm_zero_row():
    x = Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]), requires_grad=True)
    (g,) = grad(T.row_norm(x).sum(), [x])
    np.testing.assert_allclose(g.data, [[0.0, 0.0], [0.6, 0.8]])


# input gradients and double backprop

def test_input_gradient_of_linear_map():
    net = _linear_net([[1.0, 2.0]], [0.0])
    v = Tensor(Rng(0).normal(size=(5, 2)), requires_grad=True)
    g = input_gradient_node(net(v), v)
    np.testing.assert_array_equal(g.data, np.tile([1.0, 2.0], (5, 1)))


def test_penalty_zero_for_unit_linear_critic():
    w = np.array([[0.6, 0.8, 0.0]])
    critic = _linear_net(w, [0.3])
    for mode in ("interpolate", "real_point"):
        pen = gradient_penalty_term(critic, np.ones((4, 1)), np.zeros((4, 2)), np.ones((4, 2)), 10.0, mode, Rng(0))
        assert abs(pen.item()) < 1e-15
        gw, gb = grad(pen, critic.parameters())
        assert gw.shape == (1, 3) and gb.shape == (1,)


def test_penalty_value_for_norm_three():
    critic = _linear_net([[3.0, 0.0, 0.0]], [0.0])
    pen = gradient_penalty_term(critic, np.ones((4, 1)), np.zeros((4, 2)), np.ones((4, 2)), 10.0, "interpolate", Rng(0))
    assert pen.item() == pytest.approx(40.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_penalty_double_backprop_matches_finite_differences(seed):
    r = Rng(200).child(str(seed))
    critic = build_mlp([3, 8, 8, 1], "leaky_relu(0.2)", r.child("init"))
    for b in critic.biases:
        b.data = r.normal(0.0, 0.5, size=b.shape)
    while True:
        x = r.uniform(size=(6, 1))
        zr, zf = r.normal(size=(6, 2)), r.normal(size=(6, 2))
        eps = Rng(seed).uniform(size=(6, 1))
        if min_preactivation(critic, np.hstack([x, eps * zr + (1 - eps) * zf])) > 1e-3:
            break

    def pen():
        return gradient_penalty_term(critic, x, zr, zf, 10.0, "interpolate", Rng(seed))

    ad = backward_grads(pen(), critic.parameters())
    fd = _fd_grad(lambda: pen().item(), critic.parameters())
    assert gradient_rel_err(ad, fd) <= 1e-4


# Adam

def test_adam_first_step():
    p = Tensor(np.array([0.0]))
    adam_step([p], [np.array([1.0])], AdamState(lr=0.1))
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.5, -2.0]))
    st_ = AdamState(lr=0.1)
    for _ in range(3):
        adam_step([p], [np.zeros(2)], st_)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert st_.step == 3


def test_adam_second_step_beta1_zero():
    p = Tensor(np.array([0.0]))
    st_ = AdamState(lr=0.01, beta1=0.0)
    adam_step([p], [np.array([1.0])], st_)
    before = p.data[0]
    adam_step([p], [np.array([1.0])], st_)
    assert p.data[0] - before == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([Tensor(np.zeros(2))], [np.zeros(3)], AdamState())


# EMA

def test_ema_single_update():
    p = Tensor(np.array([1.0]))
    ema = EmaState(0.99, [np.zeros(1)])
    ema_update(ema, [p])
    assert ema.shadow[0][0] == pytest.approx(0.01, abs=1e-15)


def test_ema_fixed_point():
    p = Tensor(np.array([0.7, -0.2]))
    ema = EmaState.from_params([p], 0.9)
    ema_update(ema, [p])
    np.testing.assert_array_equal(ema.shadow[0], p.data)


@given(st.floats(0.5, 0.999), st.integers(1, 50), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_ema_geometric_series(decay, k, c):
    p = Tensor(np.array([c]))
    ema = EmaState(decay, [np.zeros(1)])
    for _ in range(k):
        ema_update(ema, [p])
    assert ema.shadow[0][0] == pytest.approx(c * (1 - decay**k), abs=1e-12)


# schedule

@pytest.mark.parametrize("epoch, expected", [(10, 1e-3), (30, 5e-4), (40, 5e-4), (60, 2.5e-4)])
def test_lr_schedule(epoch, expected):
    assert lr_schedule_value(1e-3, epoch, [30, 50]) == pytest.approx(expected, rel=1e-15)


def test_lr_schedule_rejects_unsorted():
    with pytest.raises(ValueError):
        lr_schedule_value(1e-3, 5, [50, 30])


# Lipschitz bound

def test_lipschitz_scalar_and_identity():
    assert lipschitz_upper_bound(_linear_net([[3.0]], [0.0])) == pytest.approx(3.0, rel=1e-12)
    assert lipschitz_upper_bound(_linear_net(np.eye(2), [0.0, 0.0])) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_spectral_norm_matches_characteristic_polynomial(seed):
    w = Rng(seed).normal(size=(3, 3))
    g = w.T @ w
    # eigenvalues of the 3x3 Gram matrix from its characteristic polynomial
    c2 = -np.trace(g)
    c1 = 0.5 * (np.trace(g) ** 2 - np.trace(g @ g))
    c0 = -np.linalg.det(g)
    lam = np.max(np.roots([1.0, c2, c1, c0]).real)
    assert spectral_norm(w) == pytest.approx(np.sqrt(lam), rel=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_lipschitz_bound_dominates(seed):
    r = Rng(seed)
    net = build_mlp([3, 16, 16, 2], "leaky_relu(0.2)", r)
    u, v = r.normal(size=(1000, 3)), r.normal(size=(1000, 3))
    k = lipschitz_upper_bound(net)
    lhs = np.linalg.norm(net.predict(u) - net.predict(v), axis=1)
    assert np.all(lhs <= k * np.linalg.norm(u - v, axis=1) + 1e-9)


def test_lipschitz_bound_rejects_steep_activation():
    net = build_mlp([2, 2, 1], "leaky_relu(2.0)", Rng(0))
    with pytest.raises(ValueError):
        lipschitz_upper_bound(net)


# training determinism

def _train(seed, steps=20):
    r = Rng(seed)
    net = build_mlp([2, 8, 1], "tanh", r.child("init"))
    x = r.child("data").normal(size=(32, 2))
    y = np.sin(x[:, :1])
    opt = AdamState(1e-2)
    for _ in range(steps):
        d = net(Tensor(x)) - y
        adam_step(net.parameters(), backward_grads((d * d).mean(), net.parameters()), opt)
    return net.state()


def test_training_bit_identical():
    for a, b in zip(_train(4), _train(4)):
        np.testing.assert_array_equal(a, b)
