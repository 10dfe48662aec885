"""Entropy-constrained training objective and its schedules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .discrete import entropy_np, kernel_probs, layer_entropy_bits
from .errors import ContractError
from .layers import QuantizedDense, StochasticDense, quantized_forward, stochastic_forward
from .tensor import Tensor


@dataclass
class EcoLoss:
    task_bits: Tensor
    entropy_bits: Tensor
    alpha: float
    total: Tensor
    layer_entropy_bits: list

    def backward(self) -> None:
        T.backward(self.total)


def eco_loss(model: Sequence[StochasticDense], x, y, alpha: float, step: int = 0,
             stream: int = 0, eps_zero: bool = False) -> EcoLoss:
    """Mean task bits of one stochastic forward pass plus ``alpha * sum_l n_l H(P^l)``.

    ``alpha`` is the per-example coefficient (the dataset-level coefficient
    divided by the training set size).
    """
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    if np.size(y) == 0:
        raise ContractError("empty batch")
    probs = [kernel_probs(layer.posterior) for layer in model]
    logits = stochastic_forward(model, x, step=step, stream=stream, mean=eps_zero, probs=probs)
    task = T.softmax_cross_entropy(logits, y)
    per_layer = [layer_entropy_bits(layer.posterior, p) for layer, p in zip(model, probs)]
    ent = per_layer[0]
    for term in per_layer[1:]:
        ent = T.add(ent, term)
    total = T.add(task, T.scale(ent, alpha))
    return EcoLoss(task, ent, float(alpha), total, per_layer)


def empirical_entropy_bits(layer: QuantizedDense) -> float:
    """``n * H(mu)`` from symbol counts of a quantized layer."""
    counts = np.bincount(layer.indices(), minlength=layer.codebook.K)
    n = counts.sum()
    return float(n * entropy_np(counts / n))


def quantized_loss(model: Sequence[QuantizedDense], x, y, alpha: float) -> float:
    """Deterministic task bits of the quantized net plus ``alpha * sum_l n_l H(mu^l)``."""
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    logits = quantized_forward(model, x)
    task = T.softmax_cross_entropy(logits, y).item()
    return task + alpha * sum(empirical_entropy_bits(layer) for layer in model)


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear value from ``start_value`` to ``end_value`` over ``total_steps``, clamped after."""

    kind: str
    start_value: float
    end_value: float
    total_steps: int

    def __post_init__(self):
        if self.kind not in ("linear_ramp", "linear_decay"):
            raise ContractError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps < 1:
            raise ContractError("total_steps must be positive")


def schedule_value(s: Schedule, step: int) -> float:
    if step < 0:
        raise ContractError("step must be >= 0")
    frac = min(step, s.total_steps) / s.total_steps
    return s.start_value + (s.end_value - s.start_value) * frac


def alpha_schedule(alpha_max: float, total_steps: int, ramp_frac: float = 0.6) -> Schedule:
    return Schedule("linear_ramp", 0.0, alpha_max, max(1, int(round(ramp_frac * total_steps))))


def lr_schedule(lr_start: float, lr_end: float, total_steps: int) -> Schedule:
    return Schedule("linear_decay", lr_start, lr_end, max(1, total_steps))
