from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Parameter]) -> None:
    """One bias-corrected Adam update over ``params``; gradients are cleared afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} with shape {p.shape} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        if m.shape != p.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
