"""Fully connected networks built on :mod:`lsdm.nn.autograd`."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from lsdm.nn import autograd as T
from lsdm.nn.autograd import Tensor

_LEAKY = re.compile(r"^leaky_relu\(\s*([-+0-9.eE]+)\s*\)$")


def parse_activation(tag: str):
    """Return ``(name, slope)`` for an activation tag such as ``leaky_relu(0.2)``."""
    if tag in ("relu", "tanh", "sigmoid", "linear"):
        return tag, None
    m = _LEAKY.match(tag)
    if m:
        return "leaky_relu", float(m.group(1))
    raise ValueError(f"unknown activation {tag!r}")


def _apply(tag: str, h: Tensor) -> Tensor:
    name, slope = parse_activation(tag)
    if name == "linear":
        return h
    if name == "relu":
        return T.relu(h)
    if name == "leaky_relu":
        return T.leaky_relu(h, slope)
    if name == "tanh":
        return T.tanh(h)
    return T.sigmoid(h)


def activation_slope_bound(tag: str) -> float:
    name, slope = parse_activation(tag)
    if name == "leaky_relu":
        return max(1.0, abs(slope))
    if name == "sigmoid":
        return 0.25
    return 1.0


@dataclass
class Network:
    """An MLP ``x -> act_L(W_L ... act_1(W_1 x + b_1) ... + b_L)``.

    ``weights[i]`` has shape ``(dims[i+1], dims[i])``; ``activations[i]`` is
    applied after layer ``i``.
    """

    dims: list
    activations: list
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.activations) != len(self.dims) - 1:
            raise ValueError("need one activation per layer")
        for tag in self.activations:
            parse_activation(tag)

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x):
        return forward(self, x)

    def predict(self, x) -> np.ndarray:
        """Forward pass on a plain array without recording a graph."""
        with T.no_grad():
            return forward(self, x).data

    def copy(self) -> "Network":
        return Network(
            list(self.dims),
            list(self.activations),
            [Tensor(w.data.copy(), requires_grad=True) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad=True) for b in self.biases],
        )

    def state(self) -> list:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ValueError(f"shape mismatch {a.shape} vs {p.shape}")
            p.data = a.copy()


def build_mlp(dims, activations, rng, init="auto") -> Network:
    """Create an MLP with He (relu family) or Xavier-uniform weights and zero biases.

    ``activations`` is a list with one tag per layer, or a single tag reused for
    every hidden layer with a linear output. ``init="identity"`` makes every
    layer an identity map and needs equal dims.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("an MLP needs at least one layer (two dims)")
    if any(d < 1 for d in dims):
        raise ValueError(f"all layer dims must be positive, got {dims}")
    if isinstance(activations, str):
        activations = [activations] * (len(dims) - 2) + ["linear"]
    activations = list(activations)
    net = Network(dims, activations)
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        name, _ = parse_activation(activations[i])
        if init == "identity":
            if fan_in != fan_out:
                raise ValueError("identity init needs square layers")
            w = np.eye(fan_in)
        elif init == "auto" and name in ("relu", "leaky_relu"):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        elif init == "auto":
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(fan_out, fan_in))
        else:
            raise ValueError(f"unknown init scheme {init!r}")
        net.weights.append(Tensor(w, requires_grad=True))
        net.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return net


def forward(net: Network, batch) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"expected last dim {net.in_dim}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("non-finite network input")
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = _apply(act, h @ w.T + b)
    return h


def spectral_norm(w: np.ndarray, rtol: float = 1e-9, max_iter: int = 20000) -> float:
    """Largest singular value of ``w`` by power iteration on ``w.T @ w``."""
    w = np.asarray(w, dtype=np.float64)
    gram = w.T @ w
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    # a start vector orthogonal to the top eigenvector would stall; perturb it
    v = v + 1e-3 * np.sin(np.arange(1, gram.shape[0] + 1))
    lam = 0.0
    for _ in range(max_iter):
        u = gram @ v
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        new = float(v @ u / (v @ v))
        v = u / nrm
        if abs(new - lam) <= rtol * abs(new):
            lam = float(v @ gram @ v)
            break
        lam = new
    else:
        # slow convergence (clustered top singular values)
        return float(np.linalg.norm(w, 2))
    return float(np.sqrt(max(lam, 0.0)))


def lipschitz_upper_bound(net: Network) -> float:
    """Product of per-layer spectral norms, valid for 1-Lipschitz activations."""
    for tag in net.activations:
        if activation_slope_bound(tag) > 1.0:
            raise ValueError(f"activation {tag!r} is not 1-Lipschitz")
    k = 1.0
    for w in net.weights:
        k *= spectral_norm(w.data)
    return k
