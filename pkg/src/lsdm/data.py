"""Synthetic circle-manifold data and paired/unpaired containers.

Model: ``X ~ Unif[0, pi]``, ``Y = (sin(X + e), cos(X + e))`` with
``e ~ N(0, (pi/10)^2)``. Unpaired responses may come from a shifted model,
``Y = (sin(X + e) + c1, cos(X + e) + c1)`` with ``e ~ N(c2, (pi/10)^2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lsdm.rng import Rng, as_rng

SIGMA = np.pi / 10.0


@dataclass
class PairedSet:
    x: np.ndarray
    y: np.ndarray
    x_bounds: tuple = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have the same number of rows")
        if self.x_bounds is None:
            self.x_bounds = (float(self.x.min()), float(self.x.max())) if len(self.x) else (0.0, 1.0)
        self.x_bounds = tuple(float(b) for b in self.x_bounds)

    def __len__(self):
        return len(self.x)

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]


@dataclass
class UnpairedSet:
    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]

    def __len__(self):
        return len(self.y)


TestSet = PairedSet


@dataclass
class CircleModelConfig:
    n: int = 250
    N: int = 750
    c1: float = 0.0
    c2: float = 0.0
    sigma: float = SIGMA
    test_size: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.N < 0 or self.test_size < 0:
            raise ValueError("need n >= 1, N >= 0 and test_size >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def _responses(x, rng, sigma, c1=0.0, c2=0.0):
    eps = rng.normal(c2, sigma, size=len(x)) if sigma > 0 else np.full(len(x), float(c2))
    ang = x + eps
    return np.column_stack([np.sin(ang) + c1, np.cos(ang) + c1])


def sample_circle_model(cfg: CircleModelConfig, rng=None):
    """Draw ``(paired, unpaired, test)`` with one child stream per split.

    Paired and test sets use the unshifted model; only the unpaired split
    sees ``c1`` and ``c2``.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    bounds = (0.0, float(np.pi))
    out = []
    for label, size in (("paired", cfg.n), ("test", cfg.test_size)):
        r = rng.child(label)
        x = r.uniform(0.0, np.pi, size=size)
        out.append(PairedSet(x, _responses(x, r, cfg.sigma), x_bounds=bounds))
    r = rng.child("unpaired")
    xu = r.uniform(0.0, np.pi, size=cfg.N)
    unpaired = UnpairedSet(_responses(xu, r, cfg.sigma, cfg.c1, cfg.c2))
    return out[0], unpaired, out[1]


def oracle_conditional_sample(x: float, count: int, rng, sigma: float = SIGMA) -> np.ndarray:
    """Exact draws from ``Y | X = x``; ``sigma=0`` gives the noiseless point."""
    rng = as_rng(rng)
    return _responses(np.full(int(count), float(x)), rng, sigma)


def dist_to_circle_support(y, c1: float = 0.0):
    """Distance from points to the unit circle centred at ``(c1, c1)``."""
    y = np.asarray(y, dtype=np.float64)
    d = np.abs(np.linalg.norm(y - c1, axis=-1) - 1.0)
    return float(d) if d.ndim == 0 else d


@dataclass
class GaussianLatentModel:
    """Toy conditional latent ``Z | X=x ~ N(mean_fn(x), var)`` for diffusion checks."""

    slope: float = 1.0
    offset: float = -0.5
    var: float = 0.25
    dim: int = 1
    x_bounds: tuple = field(default=(0.0, 1.0))

    def mean(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        return np.repeat(self.slope * x[:, :1] + self.offset, self.dim, axis=1)

    def sample(self, x, rng):
        mu = self.mean(x)
        return mu + np.sqrt(self.var) * rng.normal(size=mu.shape)

    def sample_pairs(self, count, rng: Rng):
        x = rng.uniform(*self.x_bounds, size=(count, 1))
        return x, self.sample(x, rng)


def gaussian_mixture_latents(x, rng, centres=(-0.6, 0.6), scale=0.15):
    """Two-component mixture whose weights depend on ``x`` in [0, 1]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    pick = rng.uniform(size=len(x)) < x
    mu = np.where(pick, centres[1], centres[0])
    return (mu + scale * rng.normal(size=len(x)))[:, None]


def export_csv(path, paired: PairedSet, unpaired: UnpairedSet, test: PairedSet):
    """Write all splits to one CSV with columns ``split,x,y1,y2`` (x blank when unpaired)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "x", "y1", "y2"])
        for name, ds in (("paired", paired), ("test", test)):
            for xi, yi in zip(ds.x[:, 0], ds.y):
                w.writerow([name, repr(float(xi)), repr(float(yi[0])), repr(float(yi[1]))])
        for yi in unpaired.y:
            w.writerow(["unpaired", "", repr(float(yi[0])), repr(float(yi[1]))])
