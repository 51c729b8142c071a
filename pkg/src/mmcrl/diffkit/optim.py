"""Adaptive-moment (Adam) optimiser over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(state: OptimizerState, params: dict[str, Tensor],
                   grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Apply one bias-corrected Adam update in place and return ``params``."""
    for name, p in params.items():
        if name not in grads:
            raise DimensionError(f"missing gradient for {name!r}")
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient shape {grads[name].shape} != parameter shape {p.shape} ({name})")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
