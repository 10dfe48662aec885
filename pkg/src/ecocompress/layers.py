"""Fully connected layers: dense (pretraining), stochastic (ECO training) and quantized."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .discrete import Codebook, WeightPosterior, kernel_probs, moments, nearest_index
from .errors import DimensionError, IntegrityError
from .tensor import Tensor


@dataclass(frozen=True)
class NoiseSource:
    """Standard-normal draws keyed by ``(seed, step, layer, stream)``.

    The same key always yields the same array, independent of call order.
    """

    seed: int

    def draw(self, shape, step: int, layer: int, stream: int = 0) -> np.ndarray:
        rng = np.random.default_rng([int(self.seed), int(step), int(layer), int(stream)])
        return rng.standard_normal(shape)


def _check_width(a: Tensor, fan_in: int) -> None:
    if a.data.ndim != 2 or a.shape[1] != fan_in:
        raise DimensionError(f"activations of shape {a.shape} do not match layer input width {fan_in}")


def _add_bias(z: Tensor, bias: Tensor) -> Tensor:
    rows, cols = z.shape
    return T.add(z, T.expand(T.reshape(bias, (1, cols)), (rows, cols)))


# ---------------------------------------------------------------------------
@dataclass
class DenseLayer:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "DenseLayer":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def shape(self) -> tuple:
        return self.weight.shape

    def parameters(self) -> list:
        return [self.weight, self.bias]

    def forward(self, a: Tensor) -> Tensor:
        _check_width(a, self.shape[0])
        return _add_bias(T.matmul(a, self.weight), self.bias)


# ---------------------------------------------------------------------------
@dataclass
class StochasticDense:
    posterior: WeightPosterior  # w shaped [in, out]
    bias: Tensor
    noise: NoiseSource = field(default_factory=lambda: NoiseSource(0))
    index: int = 0

    def __post_init__(self):
        if self.posterior.w.data.ndim != 2:
            raise DimensionError(f"posterior must be shaped [in, out], got {self.posterior.w.shape}")
        if self.bias.shape != (self.shape[1],):
            raise DimensionError(f"bias {self.bias.shape} does not match layer output {self.shape[1]}")

    @classmethod
    def from_dense(cls, layer: DenseLayer, K: int, noise: NoiseSource, index: int,
                   bits: int = 32, sigma_frac: float = 0.25) -> "StochasticDense":
        post = WeightPosterior.from_weights(layer.weight.data, K, bits=bits, sigma_frac=sigma_frac)
        return cls(post, Tensor(layer.bias.data, requires_grad=True), noise, index)

    @property
    def shape(self) -> tuple:
        return self.posterior.w.shape

    def parameters(self) -> list:
        return self.posterior.parameters() + [self.bias]

    def weight_moments(self, probs: Optional[Tensor] = None) -> tuple:
        """``(nu_W, var_W)`` reshaped to ``[in, out]``."""
        nu, var = moments(self.posterior, probs)
        return T.reshape(nu, self.shape), T.reshape(var, self.shape)


def forward_stochastic(layer: StochasticDense, a: Tensor, eps=None, step: int = 0,
                       stream: int = 0, probs: Optional[Tensor] = None) -> Tensor:
    """One Monte-Carlo draw of the preactivations ``nu_z + sigma_z * eps``.

    ``nu_z = a nu_W + b`` and ``sigma_z = sqrt(a^2 var_W)``.  ``eps`` is drawn
    fresh per batch item from ``layer.noise`` unless given explicitly;
    pass ``eps=0`` for the mean network.
    """
    a = T.as_tensor(a)
    _check_width(a, layer.shape[0])
    nu_w, var_w = layer.weight_moments(probs)
    nu_z = _add_bias(T.matmul(a, nu_w), layer.bias)
    out_shape = nu_z.shape
    if eps is None:
        eps = layer.noise.draw(out_shape, step, layer.index, stream)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), out_shape)
    if not np.any(eps):
        return nu_z
    sigma_z = T.sqrt(T.matmul(T.square(a), var_w))
    return T.add(nu_z, T.mul(sigma_z, Tensor(eps)))


# ---------------------------------------------------------------------------
@dataclass
class QuantizedDense:
    weights: np.ndarray  # [in, out], every entry a codebook value
    bias: np.ndarray
    codebook: Codebook

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(f"weights {self.weights.shape} / bias {self.bias.shape} mismatch")
        vals = self.codebook.values
        idx = np.clip(np.searchsorted(vals, self.weights), 0, vals.size - 1)
        if not np.array_equal(vals[idx], self.weights):
            raise IntegrityError("quantized weights contain values outside the codebook")

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    def indices(self) -> np.ndarray:
        return np.searchsorted(self.codebook.values, self.weights.reshape(-1))


def forward_quantized(layer: QuantizedDense, a) -> Tensor:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != layer.shape[0]:
        raise DimensionError(f"activations of shape {a.shape} do not match layer input width {layer.shape[0]}")
    return Tensor(a @ layer.weights + layer.bias)


def quantize(layer: StochasticDense) -> QuantizedDense:
    """MAP-quantize a stochastic layer.

    The codebook is first rounded to its storage precision so the in-memory
    model is exactly what the compressed file decodes to; biases are rounded
    to float32 for the same reason.
    """
    cb = layer.posterior.codebook()
    idx = nearest_index(layer.posterior.w.data, cb.values)
    weights = cb.values[idx].reshape(layer.shape)
    bias = layer.bias.data.astype(np.float32).astype(np.float64)
    return QuantizedDense(weights, bias, cb)


# ---------------------------------------------------------------------------
# whole networks (ReLU between layers, raw logits out)
# ---------------------------------------------------------------------------
def dense_forward(layers: Sequence[DenseLayer], x) -> Tensor:
    a = T.as_tensor(x)
    for i, layer in enumerate(layers):
        a = layer.forward(a)
        if i < len(layers) - 1:
            a = T.relu(a)
    return a


def stochastic_forward(layers: Sequence[StochasticDense], x, step: int = 0, stream: int = 0,
                       mean: bool = False, probs: Optional[list] = None) -> Tensor:
    a = T.as_tensor(x)
    for i, layer in enumerate(layers):
        p = probs[i] if probs is not None else None
        a = forward_stochastic(layer, a, eps=0.0 if mean else None, step=step, stream=stream, probs=p)
        if i < len(layers) - 1:
            a = T.relu(a)
    return a


def quantized_forward(layers: Sequence[QuantizedDense], x) -> np.ndarray:
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    for i, layer in enumerate(layers):
        a = forward_quantized(layer, a).data
        if i < len(layers) - 1:
            a = np.maximum(a, 0.0)
    return a


def layer_probs(layers: Sequence[StochasticDense]) -> list:
    return [kernel_probs(layer.posterior) for layer in layers]
