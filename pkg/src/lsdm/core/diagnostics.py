"""Empirical checks of the risk decomposition, the Lipschitz transfer bound,
support proximity of the decoder range, and a 1-D quantile oracle generator."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from lsdm.core.autoencoder import AutoencoderPair
from lsdm.core.matching import GeneratorBundle
from lsdm.data import PairedSet
from lsdm.nn import Network, lipschitz_upper_bound
from lsdm.ot import as_sample, w1_exact_equal
from lsdm.rng import as_rng


def joint(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    return np.hstack([x, y])


def theorem1_decomposition(ae: AutoencoderPair, bundle: GeneratorBundle, test: PairedSet, rng) -> dict:
    """Joint W1 of generated vs. real test pairs against its two-term upper bound.

    ``joint_w1 <= recon_term + matched_w1`` holds exactly for empirical
    measures: the identity coupling of ``Y_i`` with ``D(E(Y_i))`` plus the
    triangle inequality.
    """
    rng = as_rng(rng)
    gen = bundle.sample(test.x, rng)
    recon = ae.reconstruct(test.y)
    real = joint(test.x, test.y)
    lhs = w1_exact_equal(real, joint(test.x, gen))[0]
    recon_term = float(np.linalg.norm(test.y - recon, axis=1).mean())
    matched = w1_exact_equal(joint(test.x, gen), joint(test.x, recon))[0]
    slack = recon_term + matched - lhs
    return {
        "joint_w1": lhs,
        "recon_term": recon_term,
        "matched_w1": matched,
        "slack": slack,
        "inequality_holds": bool(slack >= -1e-9),
    }


def theorem2_check(decoder: Network, latent_a, latent_b, x_a=None, x_b=None) -> dict:
    """Check ``W1(D#a, D#b) <= max(1, K) W1(a, b)`` with a certified ``K``.

    With ``x_a``/``x_b`` the comparison is between joint samples ``(x, z)``
    and ``(x, D(z))``, the predictor coordinates passing through unchanged.
    """
    a, b = as_sample(latent_a), as_sample(latent_b)
    da, db = decoder.predict(a), decoder.predict(b)
    if x_a is not None:
        a, da = joint(x_a, a), joint(x_a, da)
        b, db = joint(x_b, b), joint(x_b, db)
    k = lipschitz_upper_bound(decoder)
    wl = w1_exact_equal(a, b)[0]
    wd = w1_exact_equal(da, db)[0]
    rhs = max(1.0, k) * wl
    slack = rhs - wd
    return {
        "w1_latent": wl,
        "w1_decoded": wd,
        "K_hat": k,
        "slack": slack,
        "holds": bool(wd <= rhs + 1e-9 * max(1.0, rhs)),
    }


def latent_probes(encoder: Network, y, grid_size: int = 200) -> np.ndarray:
    """Encoded responses plus a uniform grid over their bounding box."""
    z = encoder.predict(y)
    lo, hi = z.min(axis=0), z.max(axis=0)
    if z.shape[1] == 1:
        grid = np.linspace(lo[0], hi[0], grid_size)[:, None]
    else:
        k = max(2, int(round(grid_size ** (1.0 / z.shape[1]))))
        axes = [np.linspace(l, h, k) for l, h in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, z.shape[1])
    return np.vstack([z, grid])


def range_proximity(decoder: Network, latent_probe, support_dist) -> float:
    """Largest distance from a decoded probe to the response support."""
    probe = np.asarray(latent_probe, dtype=np.float64)
    if probe.size == 0:
        raise ValueError("no latent probes")
    return float(np.max(support_dist(decoder.predict(probe.reshape(len(probe), -1)))))


class QuantileOracle:
    """``H*(x, eta) = Q_cell(x)(Phi(eta_1))`` for a scalar latent.

    Each cell holds either a sorted sample (empirical inverse CDF) or an exact
    quantile function.
    """

    def __init__(self, edges, quantile_fns):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.quantile_fns = list(quantile_fns)
        if len(self.quantile_fns) != len(self.edges) - 1:
            raise ValueError("need one quantile function per cell")

    @classmethod
    def from_samples(cls, x, z, bins=20, x_bounds=None):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 2:
            if z.shape[1] != 1:
                raise ValueError("the quantile oracle needs a one-dimensional latent")
            z = z[:, 0]
        lo, hi = x_bounds if x_bounds is not None else (x.min(), x.max())
        edges = np.linspace(lo, hi, bins + 1)
        cells = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
        fns = []
        for c in range(bins):
            vals = np.sort(z[cells == c])
            if vals.size == 0:
                raise ValueError(f"cell {c} of the quantile oracle is empty")
            fns.append(_empirical_quantile(vals))
        return cls(edges, fns)

    @classmethod
    def from_discrete(cls, levels, quantile_fns):
        """Cells centred on discrete predictor values."""
        levels = np.sort(np.asarray(levels, dtype=np.float64))
        mids = (levels[1:] + levels[:-1]) / 2.0
        edges = np.concatenate([[-np.inf], mids, [np.inf]])
        return cls(edges, quantile_fns)

    def cell(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.quantile_fns) - 1)

    def __call__(self, x, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=np.float64)
        u = norm.cdf(eta.reshape(len(eta), -1)[:, 0])
        cells = self.cell(x)
        out = np.empty(len(u))
        for c in np.unique(cells):
            sel = cells == c
            out[sel] = self.quantile_fns[c](u[sel])
        return out[:, None]


def _empirical_quantile(sorted_vals):
    k = len(sorted_vals)

    def q(u):
        # inverse of the empirical CDF
        idx = np.clip(np.ceil(np.asarray(u) * k).astype(int) - 1, 0, k - 1)
        return sorted_vals[idx]

    return q


def quantile_oracle_generator(x, z, bins=20, x_bounds=None) -> QuantileOracle:
    return QuantileOracle.from_samples(x, z, bins=bins, x_bounds=x_bounds)
