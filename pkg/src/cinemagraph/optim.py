"""Adam with bias correction, operating in place on named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Apply one Adam update using the ``.grad`` of every parameter.

    Raises ``ValueError`` naming the first parameter with no gradient; nothing is
    updated in that case.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if p.grad.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {p.grad.shape}, expected {p.shape}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype, copy=False)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
