"""ADAM with bias correction, operating on plain arrays."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..errors import DimensionError


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              lr: float) -> list:
    """Return updated copies of ``params``; ``state`` is advanced in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state disagree in length")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise DimensionError(f"parameter {i}: shape {p.shape} vs grad {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def apply_adam(state: AdamState, tensors, lr: float) -> None:
    """Step a list of leaf tensors using their accumulated ``.grad`` (missing grads count as 0)."""
    params = [t.data for t in tensors]
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t, new in zip(tensors, adam_step(state, params, grads, lr)):
        t.data = new
        t.grad = None
