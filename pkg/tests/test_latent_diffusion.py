import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from lsdm.data import GaussianLatentModel
from lsdm.diffusion import (
    DiffusionBundle,
    DiffusionConfig,
    ScoreNet,
    dsm_loss,
    dsm_loss_value,
    em_sample,
    gaussian_score,
    noise_std,
    ou_marginal,
    prop2_report,
    time_embedding,
    train_score_net,
)
from lsdm.harness.verify import _fd_grad, gradient_rel_err
from lsdm.nn import build_mlp, grad
from lsdm.ot import w1
from lsdm.rng import Rng

GAUSS = GaussianLatentModel()


def zero_score(z, x, t):
    return np.zeros_like(np.asarray(z, dtype=np.float64))


def stationary_score(z, x, t):
    return -np.asarray(z, dtype=np.float64)


@pytest.fixture(scope="module")
def gauss_pairs():
    return GAUSS.sample_pairs(1000, Rng(0).child("train"))


@pytest.fixture(scope="module")
def gauss_trained(gauss_pairs):
    x, z = gauss_pairs
    return train_score_net(x, z, DiffusionConfig(steps=3000), Rng(1))


# forward process

def test_ou_marginal_values():
    assert ou_marginal(0.0) == (1.0, 0.0)
    s, v = ou_marginal(math.log(4))
    assert s == pytest.approx(0.5, abs=1e-15) and v == pytest.approx(0.75, abs=1e-15)
    s, v = ou_marginal(50.0)
    assert s < 1e-10 and abs(v - 1) < 1e-10


def test_ou_marginal_rejects_negative():
    with pytest.raises(ValueError):
        ou_marginal(-0.1)


@given(st.floats(0, 60))
def test_ou_conservation(t):
    s, v = ou_marginal(t)
    assert s * s + v == pytest.approx(1.0, abs=1e-15)


def test_ou_marginal_vectorised():
    s, v = ou_marginal(np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(s, np.exp(-0.5 * np.array([0.0, 1.0, 2.0])), rtol=1e-15)
    assert v.shape == (3,)


def test_config_validation():
    with pytest.raises(ValueError):
        DiffusionConfig(horizon=0.0)
    with pytest.raises(ValueError):
        DiffusionConfig(n_steps=0)
    assert DiffusionConfig(horizon=5.0, n_steps=200).dt == 0.025


# score network

def test_score_net_shapes():
    net = ScoreNet.build(2, 3, Rng(0), hidden=(8,))
    assert net.net.in_dim == 2 + 3 + 16
    out = net(np.zeros((4, 2)), np.zeros((4, 3)), 0.5)
    assert out.shape == (4, 2)


def test_time_embedding_uses_noise_level():
    t = np.array([0.01, 1.0])
    emb = time_embedding(t, n_freq=2)
    arg = np.log(noise_std(t))[:, None] * np.array([0.125, 0.25])
    np.testing.assert_allclose(emb, np.hstack([np.sin(arg), np.cos(arg)]), rtol=1e-15)


def test_gaussian_score_accepts_per_sample_times():
    score = gaussian_score(GAUSS.mean, GAUSS.var)
    z, x, t = np.zeros((5, 1)), np.linspace(0, 1, 5)[:, None], np.linspace(0.1, 2, 5)
    out = score(z, x, t)
    assert out.shape == (5, 1)
    s, v = ou_marginal(t[2])
    assert out[2, 0] == pytest.approx(GAUSS.mean(x[2:3])[0, 0] * s / (GAUSS.var * s * s + v), rel=1e-12)


# loss

@pytest.mark.parametrize("t", [0.1, 1.0, 3.0])
def test_dsm_loss_zero_score_expectation(t):
    m, n = 2, 200_000
    r = Rng(3)
    z0 = np.zeros((n, m))
    val = dsm_loss_value(zero_score, z0, np.zeros((n, 1)), np.full(n, t), r.normal(size=z0.shape))
    assert val == pytest.approx(m / (1 - math.exp(-t)), rel=0.02)


def test_stationary_score_beats_zero():
    r = Rng(4)
    n = 10_000
    z0 = r.normal(size=(n, 1))
    t = r.uniform(1e-3, 5.0, size=n)
    xi = r.normal(size=z0.shape)
    x = np.zeros((n, 1))
    assert dsm_loss_value(stationary_score, z0, x, t, xi) < dsm_loss_value(zero_score, z0, x, t, xi)


def test_dsm_loss_zero_network_matches_callable():
    net = ScoreNet.build(1, 1, Rng(5), hidden=(4,))
    for w in net.net.weights:
        w.data[:] = 0.0
    r = Rng(6)
    z0, x = r.normal(size=(64, 1)), r.uniform(size=(64, 1))
    t, xi = r.uniform(0.01, 5, size=64), r.normal(size=(64, 1))
    assert dsm_loss(net, z0, x, DiffusionConfig(), None, t=t, xi=xi).item() == pytest.approx(
        dsm_loss_value(zero_score, z0, x, t, xi), rel=1e-14)


def test_dsm_loss_gradient_matches_finite_differences():
    r = Rng(7)
    net = ScoreNet(build_mlp([1 + 1 + 8, 6, 6, 1], ["tanh", "tanh", "linear"], r.child("init")), 1, (0.0, 1.0), 4)
    z0, x = r.normal(size=(16, 1)), r.uniform(size=(16, 1))
    t, xi = r.uniform(0.05, 5, size=16), r.normal(size=(16, 1))
    cfg = DiffusionConfig()
    params = net.net.parameters()
    ad = [g.data for g in grad(dsm_loss(net, z0, x, cfg, None, t=t, xi=xi), params)]
    fd = _fd_grad(lambda: dsm_loss(net, z0, x, cfg, None, t=t, xi=xi).item(), params)
    assert gradient_rel_err(ad, fd, floor=1e-6) <= 1e-4


# training

def test_point_mass_latents_concentrate():
    r = Rng(0)
    x = r.integers(0, 2, size=(512, 1)).astype(float)
    z = np.where(x > 0, 0.5, -0.5)
    cfg = DiffusionConfig(steps=15000, n_steps=1000)
    score, _ = train_score_net(x, z, cfg, r)
    for xv, target in ((0.0, -0.5), (1.0, 0.5)):
        gen = em_sample(score, np.array([[xv]]), cfg, Rng(9), count=500)
        assert gen.std() <= 0.1
        assert abs(gen.mean() - target) <= 0.05


def test_point_mass_analytic_control():
    score = gaussian_score(lambda x: np.where(x > 0, 0.5, -0.5), 0.0)
    gen = em_sample(score, np.array([[1.0]]), DiffusionConfig(n_steps=1000), Rng(9), count=2000)
    assert gen.std() <= 0.08


def test_training_loss_decreases_over_seeds():
    x, z = GAUSS.sample_pairs(640, Rng(10))
    for seed in range(5):
        _, hist = train_score_net(x, z, DiffusionConfig(epochs=100, batch=64), Rng(seed))
        loss = np.asarray(hist["loss"])
        assert len(loss) == 1000
        assert loss[-100:].mean() < loss[:100].mean()


def probe_grid(horizon=5.0):
    """x on [0, 1], t on a uniform grid over (0, T], z at the central 95% quantiles of Z_t | x."""
    q = norm.ppf(np.linspace(0.025, 0.975, 21))
    x, qq, t = np.meshgrid(np.linspace(0, 1, 11), q, np.linspace(horizon / 15, horizon, 15), indexing="ij")
    x, qq, t = x.reshape(-1, 1), qq.reshape(-1, 1), t.reshape(-1)
    s, v = ou_marginal(t)
    s, v = s[:, None], v[:, None]
    return GAUSS.mean(x) * s + np.sqrt(GAUSS.var * s * s + v) * qq, x, t


def test_gaussian_score_fit_on_probe_grid(gauss_trained):
    score, _ = gauss_trained
    oracle = gaussian_score(GAUSS.mean, GAUSS.var)
    z, x, t = probe_grid()
    assert np.mean((score(z, x, t) - oracle(z, x, t)) ** 2) <= 0.1


def test_training_needs_a_full_batch():
    with pytest.raises(ValueError):
        train_score_net(np.zeros((10, 1)), np.zeros((10, 1)), DiffusionConfig(batch=64))


def test_training_is_deterministic():
    x, z = GAUSS.sample_pairs(128, Rng(11))
    cfg = DiffusionConfig(steps=50)
    a, ha = train_score_net(x, z, cfg, Rng(2))
    b, hb = train_score_net(x, z, cfg, Rng(2))
    assert ha["loss"] == hb["loss"]
    for p, q in zip(a.net.parameters(), b.net.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


# sampler

def test_single_step_hand_formula():
    cfg = DiffusionConfig(horizon=2.0, n_steps=1)

    def score(z, x, t):
        return -z * np.reshape(t, (-1, 1)) + x

    x = np.array([[0.3], [0.7]])
    r = Rng(12)
    eta0 = r.normal(size=(2, 1))
    eta1 = r.normal(size=(2, 1))
    want = eta0 + (0.5 * eta0 + score(eta0, x, 2.0)) * 2.0 + eta1 * math.sqrt(2.0)
    np.testing.assert_allclose(em_sample(score, x, cfg, Rng(12)), want, rtol=1e-15)


def test_multi_step_equals_nested_composition():
    cfg = DiffusionConfig(horizon=3.0, n_steps=7)
    net = ScoreNet.build(1, 1, Rng(13), hidden=(8,))
    x = Rng(14).uniform(size=(20, 1))
    r = Rng(15)
    z = r.normal(size=(20, 1))
    dt = cfg.dt
    for k in range(cfg.n_steps):
        t = cfg.horizon - k * dt
        z = z + (0.5 * z + net(z, x, np.full(20, t))) * dt + math.sqrt(dt) * r.normal(size=z.shape)
    np.testing.assert_array_equal(em_sample(net, x, cfg, Rng(15)), z)


def test_stationary_score_keeps_standard_normal():
    gen = em_sample(stationary_score, np.zeros((1, 1)), DiffusionConfig(), Rng(16), count=10_000)
    assert abs(gen.mean()) <= 0.05
    assert 0.9 <= gen.var() <= 1.1


def test_analytic_gaussian_end_to_end():
    xt, zt = GAUSS.sample_pairs(1000, Rng(17))
    gen = em_sample(gaussian_score(GAUSS.mean, GAUSS.var), xt, DiffusionConfig(), Rng(18))
    assert w1(gen, zt) <= 0.1
    assert w1(np.hstack([xt, gen]), np.hstack([xt, zt])) <= 0.1


def test_sampler_determinism_and_count():
    net = ScoreNet.build(1, 1, Rng(19), hidden=(8,))
    a = em_sample(net, np.array([0.5]), DiffusionConfig(n_steps=20), Rng(20), count=30)
    b = em_sample(net, np.array([0.5]), DiffusionConfig(n_steps=20), Rng(20), count=30)
    assert a.shape == (30, 1)
    np.testing.assert_array_equal(a, b)


def test_sampler_reports_blow_up():
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError, match="step"):
        em_sample(lambda z, x, t: 1e200 * z * z, np.zeros((2, 1)), DiffusionConfig(n_steps=5), Rng(0))


# sampling-error report

def test_prop2_analytic_long_horizon():
    xt, zt = GAUSS.sample_pairs(1000, Rng(21))
    oracle = gaussian_score(GAUSS.mean, GAUSS.var)
    rep = prop2_report(oracle, xt, zt, DiffusionConfig(horizon=10.0, n_steps=400), Rng(22), analytic_score=oracle)
    assert rep["L_SM_estimate"] == 0.0
    assert rep["bound"] == pytest.approx(math.exp(-5), rel=1e-12)
    assert rep["bound"] == pytest.approx(0.0067, abs=1e-4)
    assert rep["measured_w1"] <= 0.1


def test_prop2_short_horizon_is_worse():
    xt, zt = GAUSS.sample_pairs(1000, Rng(23))
    oracle = gaussian_score(GAUSS.mean, GAUSS.var)
    short = prop2_report(oracle, xt, zt, DiffusionConfig(horizon=0.5, n_steps=20), Rng(24))
    long = prop2_report(oracle, xt, zt, DiffusionConfig(horizon=5.0, n_steps=200), Rng(24))
    assert short["L_SM_estimate"] is None and short["bound"] is None
    assert short["measured_w1"] > long["measured_w1"]


def test_prop2_trained_beats_untrained(gauss_pairs):
    x, z = gauss_pairs
    xt, zt = GAUSS.sample_pairs(500, Rng(25))
    oracle = gaussian_score(GAUSS.mean, GAUSS.var)
    cfg = DiffusionConfig(steps=1500)
    for seed in range(5):
        untrained = ScoreNet.build(1, 1, Rng(seed).child("init"))
        trained, _ = train_score_net(x, z, cfg, Rng(seed))
        a = prop2_report(untrained, xt, zt, cfg, Rng(100 + seed), analytic_score=oracle)
        b = prop2_report(trained, xt, zt, cfg, Rng(100 + seed), analytic_score=oracle)
        assert a["measured_w1"] > b["measured_w1"]
        assert a["L_SM_estimate"] > b["L_SM_estimate"]


# bundle

def test_bundle_decodes_generated_latents(gauss_trained):
    score, _ = gauss_trained
    dec = build_mlp([1, 2], ["linear"], Rng(26))
    bundle = DiffusionBundle(dec, score, DiffusionConfig(n_steps=20), (0.0, 1.0))
    x = np.linspace(0, 1, 7)[:, None]
    y = bundle.sample(x, Rng(27))
    assert y.shape == (7, 2)
    np.testing.assert_array_equal(y, dec.predict(bundle.latent(x, Rng(27))))
    assert bundle.p == 1
