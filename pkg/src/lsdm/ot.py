"""Exact 1-Wasserstein distances and f-divergences on finite supports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import rel_entr, xlogy

DIVERGENCES = ("KL", "JS", "chi2", "TV", "hellinger2")


@dataclass(frozen=True)
class Matching:
    """A permutation coupling: point ``i`` of ``a`` is sent to ``b[perm[i]]``."""

    perm: np.ndarray
    cost: float


@dataclass(frozen=True)
class DiscreteDist1D:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.float64).ravel()
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if s.shape != p.shape or s.size == 0:
            raise ValueError("support and probs must be non-empty and of equal length")
        if np.any(np.diff(s) <= 0):
            raise ValueError("support must be sorted and distinct")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)

    @classmethod
    def dirac(cls, x):
        return cls(np.array([float(x)]), np.array([1.0]))


def as_sample(a) -> np.ndarray:
    """Validate an empirical sample and return it as an (n, dim) array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("an empirical sample needs at least one point")
    if not np.all(np.isfinite(a)):
        raise ValueError("sample contains non-finite coordinates")
    return a


def _assignment(cost):
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def w1_exact_equal(a, b, solver=None):
    """Exact W1 between two equal-size, equal-weight point clouds.

    Returns ``(value, Matching)``. ``solver`` maps a cost matrix to a
    permutation and defaults to the Jonker-Volgenant solver in scipy.
    """
    a, b = as_sample(a), as_sample(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"sample counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    cost = cdist(a, b)
    perm = np.asarray((solver or _assignment)(cost), dtype=np.int64)
    value = float(cost[np.arange(len(perm)), perm].mean())
    return value, Matching(perm, value)


def w1(a, b) -> float:
    return w1_exact_equal(a, b)[0]


def w1_1d_weighted(p: DiscreteDist1D, q: DiscreteDist1D) -> float:
    """W1 on the line as the integral of the absolute CDF difference."""
    grid = np.union1d(p.support, q.support)
    fp = np.cumsum(np.bincount(np.searchsorted(grid, p.support), p.probs, len(grid)))
    fq = np.cumsum(np.bincount(np.searchsorted(grid, q.support), q.probs, len(grid)))
    return float(np.sum(np.abs(fp - fq)[:-1] * np.diff(grid)))


def f_divergence(p, q, kind: str) -> float:
    """Divergence of histogram ``p`` from ``q`` on a shared support (nats).

    KL and chi2 are ``sum q f(p/q)`` with ``f(x)=x log x`` and ``(x-1)^2``;
    both require ``p_i = 0`` wherever ``q_i = 0``.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError("histograms must share a support")
    if kind not in DIVERGENCES:
        raise ValueError(f"unknown divergence {kind!r}; choose from {DIVERGENCES}")
    if kind in ("KL", "chi2") and np.any((q == 0) & (p > 0)):
        raise ValueError(f"{kind} is infinite: p is not absolutely continuous w.r.t. q")
    if kind == "KL":
        return float(np.sum(rel_entr(p, q)))
    if kind == "chi2":
        on = q > 0
        return float(np.sum((p[on] - q[on]) ** 2 / q[on]))
    if kind == "TV":
        return 0.5 * float(np.sum(np.abs(p - q)))
    if kind == "hellinger2":
        return float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))
    m = 0.5 * (p + q)
    on = m > 0
    js = xlogy(p[on], p[on] / m[on]) + xlogy(q[on], q[on] / m[on])
    return 0.5 * float(np.sum(js))


def _on_common_support(p: DiscreteDist1D, q: DiscreteDist1D):
    grid = np.union1d(p.support, q.support)
    hp = np.zeros(len(grid))
    hq = np.zeros(len(grid))
    hp[np.searchsorted(grid, p.support)] = p.probs
    hq[np.searchsorted(grid, q.support)] = q.probs
    return grid, hp, hq


def prop3_bound_check(p: DiscreteDist1D, q: DiscreteDist1D, kind: str) -> dict:
    """Compare exact W1 with ``2 diam max(D, sqrt(D/2))`` for divergence ``kind``."""
    grid, hp, hq = _on_common_support(p, q)
    d = f_divergence(hp, hq, kind)
    diam = float(grid[-1] - grid[0])
    bound = 2.0 * diam * max(d, np.sqrt(d / 2.0))
    w = w1_1d_weighted(p, q)
    return {"w1": w, "divergence": d, "diam": diam, "bound": bound, "holds": w <= bound + 1e-12}
