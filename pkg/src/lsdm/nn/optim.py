"""Adam, parameter EMA and the halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update applied to ``params`` in place.

    ``params`` are tensors (anything with a ``data`` array); ``grads`` are
    arrays or tensors of matching shapes.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    gs = [np.asarray(getattr(g, "data", g), dtype=np.float64) for g in grads]
    for p, g in zip(params, gs):
        if p.data.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
    if not state.m:
        state.m = [np.zeros_like(g) for g in gs]
        state.v = [np.zeros_like(g) for g in gs]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, gs)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


@dataclass
class EmaState:
    decay: float
    shadow: list

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1)")

    @classmethod
    def from_params(cls, params, decay):
        return cls(decay, [np.array(getattr(p, "data", p), dtype=np.float64) for p in params])


def ema_update(ema: EmaState, params) -> EmaState:
    if len(params) != len(ema.shadow):
        raise ValueError("parameter count differs from EMA shadow")
    d = ema.decay
    for i, p in enumerate(params):
        arr = np.asarray(getattr(p, "data", p), dtype=np.float64)
        if arr.shape != ema.shadow[i].shape:
            raise ValueError("parameter shape differs from EMA shadow")
        ema.shadow[i] = d * ema.shadow[i] + (1.0 - d) * arr
    return ema


def lr_schedule_value(base_lr: float, epoch: int, milestones) -> float:
    """Learning rate halved once for every milestone already reached."""
    milestones = list(milestones)
    if any(b <= a for a, b in zip(milestones, milestones[1:])):
        raise ValueError("milestones must be strictly increasing")
    return base_lr / 2.0 ** sum(1 for m in milestones if m <= epoch)
