"""Registered property checks, run as one suite with a machine-readable report.

Each report entry holds ``{"count", "passed", "worst_slack", "seconds"}``; slack is
positive when an inequality holds with room to spare and ``-error`` for
equality checks, so ``worst_slack >= -tol`` is the pass condition.
"""

from __future__ import annotations

import itertools
import json
import time
from pathlib import Path

import numpy as np

from lsdm.core.autoencoder import AutoencoderPair, StepOneConfig, build_autoencoder
from lsdm.core.diagnostics import QuantileOracle, joint, theorem1_decomposition, theorem2_check
from lsdm.core.matching import GeneratorBundle, gradient_penalty_term
from lsdm.data import CircleModelConfig, sample_circle_model
from lsdm.diffusion import ou_marginal
from lsdm.nn import build_mlp, grad, lipschitz_upper_bound
from lsdm.nn import autograd as T
from lsdm.ot import DIVERGENCES, DiscreteDist1D, f_divergence, prop3_bound_check, w1_exact_equal
from lsdm.rng import Rng

# quick scope shrinks the randomized counts; "full" uses the acceptance sizes
SIZES = {
    "full": {"ot": 200, "div": 1000, "prop3": 1000, "thm": 50, "grad": 100, "gp": 20, "lip": 50},
    "quick": {"ot": 20, "div": 100, "prop3": 100, "thm": 5, "grad": 10, "gp": 3, "lip": 5},
}


def brute_force_w1(a, b) -> float:
    """Minimum mean matching cost over all permutations (small n only)."""
    n = len(a)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    best = min(sum(cost[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
    return float(best / n)


def random_histogram_pair(rng, k_max=8, positive=True):
    k = int(rng.integers(2, k_max + 1))
    support = np.sort(rng.uniform(-3.0, 3.0, size=k))
    floor = 1e-3 if positive else 0.0
    p = rng.uniform(floor, 1.0, size=k)
    q = rng.uniform(floor, 1.0, size=k)
    p /= p.sum()
    q /= q.sum()
    return DiscreteDist1D(support, p), DiscreteDist1D(support, q)


def check_ot_oracle(rng, count, solver=None):
    worst = np.inf
    total = 0
    for n in range(2, 8):
        for _ in range(count):
            dim = int(rng.integers(1, 4))
            a = rng.normal(size=(n, dim))
            b = rng.normal(size=(n, dim))
            got = w1_exact_equal(a, b, solver=solver)[0]
            worst = min(worst, -abs(got - brute_force_w1(a, b)))
            total += 1
    return total, worst, 1e-9


def check_divergence_chains(rng, count):
    """Pinsker, KL <= chi2 and JS <= ln 2 on random histograms."""
    worst = np.inf
    for _ in range(count):
        p, q = random_histogram_pair(rng)
        d = {k: f_divergence(p.probs, q.probs, k) for k in DIVERGENCES}
        worst = min(
            worst,
            np.sqrt(d["KL"] / 2.0) - d["TV"],
            d["chi2"] - d["KL"],
            np.log(2.0) - d["JS"],
        )
    return count, worst, 1e-12


def check_prop3(rng, count):
    worst = np.inf
    n = 0
    for _ in range(count):
        p, q = random_histogram_pair(rng)
        for kind in DIVERGENCES:
            r = prop3_bound_check(p, q, kind)
            worst = min(worst, r["bound"] - r["w1"])
            n += 1
    return n, worst, 1e-12


def _random_models(rng, q=2, m=1, d=2, width=16):
    act = "leaky_relu(0.2)"
    enc = build_mlp([q, width, m], [act, "tanh"], rng.child("enc"))
    dec = build_mlp([m, width, q], [act, "linear"], rng.child("dec"))
    gen = build_mlp([1 + d, width, m], [act, "linear"], rng.child("gen"))
    return AutoencoderPair(enc, dec), GeneratorBundle(dec, gen, d, (0.0, np.pi), enc)


def check_theorems(rng, count):
    """Theorem-1 decomposition and Theorem-2 transfer on untrained models."""
    worst = np.inf
    for i in range(count):
        r = rng.child(f"model{i}")
        m = int(r.integers(1, 3))
        ae, bundle = _random_models(r, m=m)
        _, _, test = sample_circle_model(CircleModelConfig(n=1, N=0, test_size=60), r.child("data"))
        t1 = theorem1_decomposition(ae, bundle, test, r.child("gen"))
        za = bundle.latent(test.x, r.child("a"))
        zb = ae.encode(test.y)
        t2 = theorem2_check(ae.decoder, za, zb)
        t2j = theorem2_check(ae.decoder, za, zb, x_a=test.x, x_b=test.x)
        worst = min(worst, t1["slack"], t2["slack"], t2j["slack"])
    return 3 * count, worst, 1e-9


def _fd_grad(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            old = p.data[idx]
            p.data[idx] = old + h
            up = f()
            p.data[idx] = old - h
            dn = f()
            p.data[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out.append(g)
    return out


def gradient_rel_err(ad, fd, floor=1e-8) -> float:
    """Largest elementwise relative error; entries below ``floor`` compare absolutely."""
    a = np.concatenate([np.ravel(g) for g in ad])
    b = np.concatenate([np.ravel(g) for g in fd])
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b)
    big = scale >= floor
    rel = err[big] / scale[big]
    return float(max(rel.max(initial=0.0), err[~big].max(initial=0.0)))


def min_preactivation(net, x) -> float:
    """Smallest |pre-activation| over hidden layers (distance to a kink)."""
    h = np.asarray(x, dtype=np.float64)
    worst = np.inf
    for w, b, act in zip(net.weights[:-1], net.biases[:-1], net.activations[:-1]):
        pre = h @ w.data.T + b.data
        worst = min(worst, float(np.abs(pre).min()))
        h = np.where(pre > 0, pre, 0.2 * pre) if act.startswith("leaky") else np.tanh(pre)
    return worst


def random_small_mlp(rng):
    depth = int(rng.integers(1, 4))
    dims = [int(rng.integers(1, 5)) for _ in range(depth + 1)]
    acts = [str(rng.gen.choice(["tanh", "sigmoid", "linear"])) for _ in range(depth - 1)] + ["linear"]
    net = build_mlp(dims, acts, rng.child("init"))
    for b in net.biases:
        b.data = rng.normal(0.0, 0.5, size=b.shape)
    return net, dims


def check_gradients(rng, count, gp_count):
    """AD vs central differences for MLP losses and the penalty's double backprop."""
    worst_mlp = 0.0
    for i in range(count):
        r = rng.child(f"mlp{i}")
        net, dims = random_small_mlp(r)
        x = r.normal(size=(5, dims[0]))
        target = r.normal(size=(5, dims[-1]))
        params = net.parameters()

        def loss_node():
            diff = net(T.Tensor(x)) - target
            return (diff * diff).mean()

        ad = [g.data for g in grad(loss_node(), params)]
        fd = _fd_grad(lambda: loss_node().item(), params)
        worst_mlp = max(worst_mlp, gradient_rel_err(ad, fd))
    worst_gp = 0.0
    for i in range(gp_count):
        r = rng.child(f"gp{i}")
        critic = build_mlp([3, 8, 8, 1], "leaky_relu(0.2)", r.child("init"))
        for b in critic.biases:
            b.data = r.normal(0.0, 0.5, size=b.shape)
        while True:
            # keep every interpolate away from the leaky-relu kinks
            x = r.uniform(size=(6, 1))
            zr, zf = r.normal(size=(6, 2)), r.normal(size=(6, 2))
            eps = Rng(i).uniform(size=(6, 1))
            v = np.hstack([x, eps * zr + (1 - eps) * zf])
            if min_preactivation(critic, v) > 1e-3:
                break
        params = critic.parameters()

        def gp():
            return gradient_penalty_term(critic, x, zr, zf, 10.0, "interpolate", Rng(i))

        ad = [g.data for g in grad(gp(), params)]
        fd = _fd_grad(lambda: gp().item(), params)
        worst_gp = max(worst_gp, gradient_rel_err(ad, fd))
    return count, gp_count, worst_mlp, worst_gp


def check_ou_conservation(points=1000):
    t = np.linspace(0.0, 20.0, points)
    s, v = ou_marginal(t)
    return points, -float(np.max(np.abs(s * s + v - 1.0))), 1e-12


def check_quantile_oracle(rng, n=1000, bins=20):
    """Latent W1 of the binned quantile generator against encoded targets."""
    paired, _, _ = sample_circle_model(CircleModelConfig(n=n, N=0, test_size=0), rng.child("data"))
    ae = build_autoencoder(2, StepOneConfig(), rng.child("ae"))
    z = ae.encode(paired.y)
    oracle = QuantileOracle.from_samples(paired.x, z, bins, paired.x_bounds)
    gen = oracle(paired.x, rng.child("eta").normal(size=(n, 1)))
    w = w1_exact_equal(joint(paired.x, gen), joint(paired.x, z))[0]
    return 1, 4.0 / np.sqrt(n) - w, 0.0


def check_lipschitz(rng, count, pairs=200):
    """Empirical difference quotients never exceed the spectral-norm product."""
    worst = np.inf
    for i in range(count):
        r = rng.child(f"lip{i}")
        dims = [int(r.integers(1, 5)) for _ in range(int(r.integers(2, 5)))]
        acts = ["leaky_relu(0.2)"] * (len(dims) - 2) + ["linear"]
        net = build_mlp(dims, acts, r)
        a, b = r.normal(size=(pairs, dims[0])), r.normal(size=(pairs, dims[0]))
        num = np.linalg.norm(net.predict(a) - net.predict(b), axis=1)
        ratio = np.max(num / np.linalg.norm(a - b, axis=1))
        k = lipschitz_upper_bound(net)
        worst = min(worst, (k - ratio) / max(k, 1.0))
    return count, worst, 1e-9


SCOPES = ("ot", "divergence", "prop3", "theorems", "gradients", "ou", "quantile", "lipschitz")


def run_verification_suite(scope="all", size="full", seed=0, assignment_solver=None, out=None) -> dict:
    """Run the selected checks and return (optionally write) the report.

    ``scope`` is "all", one check name, or a list of names.
    ``assignment_solver`` replaces the matching solver inside the OT oracle
    check only (fault-injection hook).
    """
    names = list(SCOPES) if scope in (None, "all") else ([scope] if isinstance(scope, str) else list(scope))
    bad = set(names) - set(SCOPES)
    if bad:
        raise ValueError(f"unknown verification scope {sorted(bad)}; choose from {SCOPES}")
    sz = SIZES[size]
    root = Rng(seed)
    checks = {}

    def record(name, count, worst, tol, **extra):
        checks[name] = {
            "count": int(count),
            "worst_slack": float(worst),
            "tolerance": tol,
            "passed": bool(worst >= -tol),
            **extra,
        }

    for name in names:
        t0 = time.perf_counter()
        r = root.child(name)
        if name == "ot":
            record(name, *check_ot_oracle(r, sz["ot"], assignment_solver))
        elif name == "divergence":
            record(name, *check_divergence_chains(r, sz["div"]))
        elif name == "prop3":
            record(name, *check_prop3(r, sz["prop3"]))
        elif name == "theorems":
            record(name, *check_theorems(r, sz["thm"]))
        elif name == "gradients":
            n_mlp, n_gp, e_mlp, e_gp = check_gradients(r, sz["grad"], sz["gp"])
            # slack against the relative-error budgets 1e-5 (MLP) and 1e-4 (penalty)
            record(name, n_mlp + n_gp, min(1e-5 - e_mlp, 1e-4 - e_gp), 0.0,
                   max_rel_err_mlp=e_mlp, max_rel_err_gp=e_gp)
        elif name == "ou":
            record(name, *check_ou_conservation())
        elif name == "quantile":
            record(name, *check_quantile_oracle(r))
        elif name == "lipschitz":
            record(name, *check_lipschitz(r, sz["lip"]))
        checks[name]["seconds"] = time.perf_counter() - t0
    report = {"scope": names, "size": size, "seed": seed,
              "all_passed": all(c["passed"] for c in checks.values()), "checks": checks}
    if out is not None:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=2))
    return report
