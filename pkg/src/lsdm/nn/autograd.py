"""Dense float64 tensors with reverse-mode differentiation.

Every backward rule is written with ``Tensor`` operations, so when a gradient
is requested with ``create_graph=True`` the gradient itself becomes part of the
graph and can be differentiated again. The gradient penalty relies on this.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "grad",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "concat",
    "row_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "sqrt",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that stops operations from being recorded."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# shape plumbing


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = x.data
    lead = data.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and data.shape[i + lead] != 1
    )
    out = data.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    src = x.shape

    def backward(g):
        return (broadcast_to(g, src),)

    return _node(out.reshape(shape), (x,), backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def backward(g):
        return (sum_to(g, src),)

    return _node(np.broadcast_to(x.data, shape).copy(), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape

    def backward(g):
        return (reshape(g, src),)

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        return (transpose(g),)

    return _node(x.data.T, (x,), backward)


def index(x: Tensor, idx) -> Tensor:
    src = x.shape

    def backward(g):
        return (_scatter(g, idx, src),)

    return _node(x.data[idx], (x,), backward)


def _scatter(g: Tensor, idx, shape) -> Tensor:
    out = np.zeros(shape)
    np.add.at(out, idx, g.data)

    def backward(gg):
        return (index(gg, idx),)

    return _node(out, (g,), backward)


def concat(parts, axis=-1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(lo), int(hi))
            out.append(index(g, tuple(sl)))
        return tuple(out)

    return _node(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), backward)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return sum_to(g, sa), sum_to(g, sb)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return sum_to(g, sa), sum_to(neg(g), sb)

    return _node(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (neg(g),)

    return _node(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = sum_to(div(g, b), sa) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return _node(a.data / b.data, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    c = float(exponent)

    def backward(g):
        return (mul(g, mul(power(a, c - 1.0), c)),)

    return _node(a.data**c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    src = x.shape
    kept = np.sum(x.data, axis=axis, keepdims=True).shape

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(count))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(x: Tensor) -> Tensor:
    def backward(g):
        return (mul(g, out),)

    out = _node(np.exp(x.data), (x,), backward)
    return out


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (div(g, x),)

    return _node(np.log(x.data), (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    def backward(g):
        return (div(mul(g, 0.5), out),)

    out = _node(np.sqrt(x.data), (x,), backward)
    return out


def tanh(x: Tensor) -> Tensor:
    def backward(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _node(np.tanh(x.data), (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    def backward(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _node(0.5 * (1.0 + np.tanh(0.5 * x.data)), (x,), backward)
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""

    def backward(g):
        return (mul(g, sigmoid(x)),)

    d = x.data
    return _node(np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))), (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    # the slope mask is a constant, so curvature through the kink is zero
    mask = np.where(x.data > 0, 1.0, slope)

    def backward(g):
        return (mul(g, mask),)

    return _node(x.data * mask, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def row_norm(x: Tensor) -> Tensor:
    """Euclidean norm of every row, shape (B,). A zero row gets zero gradient."""
    n = np.sqrt(np.sum(x.data * x.data, axis=1))

    def backward(g):
        safe = add(out, (n == 0.0).astype(np.float64))
        return (mul(x, reshape(div(g, safe), (-1, 1))),)

    out = _node(n, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# differentiation


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, create_graph=False, allow_unused=True, grad_output=None):
    """Gradients of ``output`` with respect to each tensor in ``inputs``.

    ``output`` must be a scalar unless ``grad_output`` is supplied. With
    ``create_graph=True`` the returned gradients are graph nodes themselves.
    Inputs that do not influence ``output`` receive zeros, or raise when
    ``allow_unused`` is False.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError(f"gradient needs a scalar output, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    if not output.requires_grad:
        if not allow_unused:
            raise ValueError("output is not connected to any input")
        res = [Tensor(np.zeros_like(x.data)) for x in inputs]
        return res[0] if single else res

    grads = {id(output): grad_output}
    with _grad_mode(create_graph):
        for node in reversed(_toposort(output)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)

    res = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            if not allow_unused:
                raise ValueError("an input is not an ancestor of the output")
            g = Tensor(np.zeros_like(x.data))
        res.append(g)
    return res[0] if single else res
