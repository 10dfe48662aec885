"""Per-layer codebooks and Gaussian-kernel discrete weight posteriors.

Each weight ``w_i`` with scale ``sigma_i`` induces a categorical distribution
over the layer codebook ``omega``::

    P_ik  ∝  exp(-(w_i - omega_k)^2 / (2 sigma_i^2))

(the Gaussian normaliser ``1/(sigma_i sqrt(2 pi))`` is shared by every ``k`` and
cancels).  The column mean of ``P`` is the aggregate PMD whose Shannon entropy
is the differentiable stand-in for the entropy of the quantized weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

SIGMA_FLOOR = 1e-12
LOG_SIGMA_FLOOR = math.log(SIGMA_FLOOR)
VALID_BITS = (16, 32, 64)
_FLOAT_FOR_BITS = {16: np.float16, 32: np.float32, 64: np.float64}


def snap_to_precision(values, bits: int) -> np.ndarray:
    """Round ``values`` to the nearest IEEE float of width ``bits``, returned as float64."""
    if bits not in VALID_BITS:
        raise ContractError(f"bit precision must be one of {VALID_BITS}, got {bits}")
    return np.asarray(values, dtype=np.float64).astype(_FLOAT_FOR_BITS[bits]).astype(np.float64)


@dataclass(frozen=True)
class Codebook:
    """Ascending, distinct, finite codebook values stored at ``bits`` precision."""

    values: np.ndarray
    bits: int = 32

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.bits not in VALID_BITS:
            raise ContractError(f"bit precision must be one of {VALID_BITS}, got {self.bits}")
        if vals.size < 1:
            raise ContractError("codebook needs at least one value")
        if not np.all(np.isfinite(vals)):
            raise ContractError("codebook values must be finite")
        if np.any(np.diff(vals) <= 0):
            raise ContractError("codebook values must be strictly ascending")
        if not np.array_equal(snap_to_precision(vals, self.bits), vals):
            raise ContractError(f"codebook values are not representable at {self.bits} bits")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, values, bits: int = 32) -> "Codebook":
        """Snap to precision, sort, and drop duplicates created by rounding."""
        return cls(np.unique(snap_to_precision(values, bits)), bits)

    @property
    def K(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.K

    def __eq__(self, other) -> bool:
        return (isinstance(other, Codebook) and self.bits == other.bits
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.bits, self.values.tobytes()))


def init_codebook(weights, K: int) -> np.ndarray:
    """``K`` evenly spaced values over ``[-max|w|, max|w|]`` with an exact zero.

    The zero replaces whichever grid value is nearest to it (lower index on a
    tie) unless the grid already contains it.
    """
    if K < 1:
        raise ContractError(f"cardinality must be >= 1, got {K}")
    m = float(np.max(np.abs(weights))) if np.size(weights) else 0.0
    if K == 1 or m == 0.0:
        return np.zeros(1) if K == 1 else np.linspace(0.0, 1.0, K)
    grid = np.linspace(-m, m, K)
    if not np.any(grid == 0.0):
        grid[int(np.argmin(np.abs(grid)))] = 0.0
    return np.sort(grid)


def init_sigma(codebook_values, weights=None, frac: float = 0.25) -> float:
    """Initial kernel width: ``frac`` times the smallest codebook gap."""
    vals = np.sort(np.asarray(codebook_values, dtype=np.float64))
    if vals.size > 1:
        return frac * float(np.min(np.diff(vals)))
    m = float(np.max(np.abs(weights))) if weights is not None and np.size(weights) else 0.0
    return frac * m if m > 0 else 1.0


@dataclass
class WeightPosterior:
    """Continuous locations ``w``, log-scales and a shared learnable codebook."""

    w: Tensor
    log_sigma: Tensor
    omega: Tensor
    bits: int = 32
    sigma_clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        # an exact-zero codebook entry stays at zero during training
        self.pinned = self.omega.data == 0.0
        if self.w.shape != self.log_sigma.shape:
            raise ContractError(f"w {self.w.shape} and log_sigma {self.log_sigma.shape} differ")
        if self.omega.data.ndim != 1 or self.omega.size < 1:
            raise ContractError(f"omega must be a non-empty vector, got shape {self.omega.shape}")
        if self.bits not in VALID_BITS:
            raise ContractError(f"bit precision must be one of {VALID_BITS}, got {self.bits}")

    @classmethod
    def from_weights(cls, weights, K: int, bits: int = 32, sigma_frac: float = 0.25) -> "WeightPosterior":
        weights = np.asarray(weights, dtype=np.float64)
        omega = init_codebook(weights, K)
        sigma = init_sigma(omega, weights, sigma_frac)
        return cls(
            w=Tensor(weights, requires_grad=True),
            log_sigma=Tensor(np.full(weights.shape, math.log(sigma)), requires_grad=True),
            omega=Tensor(omega, requires_grad=True),
            bits=bits,
        )

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def K(self) -> int:
        return self.omega.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    def parameters(self) -> list:
        return [self.w, self.log_sigma, self.omega]

    def mask_pinned_grads(self) -> None:
        if self.omega.grad is not None and self.pinned.any():
            self.omega.grad = np.where(self.pinned, 0.0, self.omega.grad)

    def codebook(self) -> Codebook:
        return Codebook.from_values(self.omega.data, self.bits)


@dataclass
class AggregatePMD:
    probs: Tensor


# ---------------------------------------------------------------------------
def kernel_probs(post: WeightPosterior) -> Tensor:
    """Row-normalised Gaussian kernel probabilities, shape ``[n, K]``."""
    n, K = post.n, post.K
    floor_hits = int(np.count_nonzero(post.log_sigma.data < LOG_SIGMA_FLOOR))
    if floor_hits:
        post.sigma_clamped += floor_hits
    log_sigma = T.clip_min(T.reshape(post.log_sigma, (n, 1)), LOG_SIGMA_FLOOR)
    inv_var = T.expand(T.exp(T.scale(log_sigma, -2.0)), (n, K))
    w = T.expand(T.reshape(post.w, (n, 1)), (n, K))
    omega = T.expand(T.reshape(post.omega, (1, K)), (n, K))
    logits = T.scale(T.mul(T.square(T.sub(w, omega)), inv_var), -0.5)
    return T.softmax(logits, axis=1)


def moments(post: WeightPosterior, probs: Tensor = None) -> tuple:
    """Mean and variance of each weight under its categorical posterior.

    Returns ``(nu, var)`` as length-``n`` tensors.  Rounding can leave the
    variance a hair below zero; it is clamped at 0.
    """
    if probs is None:
        probs = kernel_probs(post)
    K = post.K
    omega_col = T.reshape(post.omega, (K, 1))
    nu = T.reshape(T.matmul(probs, omega_col), (post.n,))
    second = T.reshape(T.matmul(probs, T.square(omega_col)), (post.n,))
    var = T.relu(T.sub(second, T.square(nu)))
    return nu, var


def aggregate_pmd(probs: Tensor) -> AggregatePMD:
    probs = T.as_tensor(probs)
    if probs.data.ndim != 2 or probs.shape[0] == 0:
        raise ContractError(f"aggregate_pmd needs a non-empty [n x K] matrix, got {probs.shape}")
    return AggregatePMD(T.mean(probs, axis=0))


def entropy_np(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0  # no negative zero


def entropy(pmd) -> Union[Tensor, float]:
    """Shannon entropy in bits.

    Differentiable (returns a scalar :class:`Tensor`) for an
    :class:`AggregatePMD`; a plain float for count-based PMDs or arrays.
    """
    probs = pmd.probs if hasattr(pmd, "probs") else pmd
    if isinstance(probs, Tensor):
        return T.negate(T.sum(T.xlog2x(probs)))
    return entropy_np(probs)


def layer_entropy_bits(post: WeightPosterior, probs: Tensor = None) -> Tensor:
    """``n * H(P)`` for one layer."""
    if probs is None:
        probs = kernel_probs(post)
    return T.scale(entropy(aggregate_pmd(probs)), float(post.n))


def elementwise_entropy_sum(probs) -> float:
    """Diagnostic only: sum over weights of the entropy of each row ``P_i``."""
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs)
    safe = np.where(p > 0, p, 1.0)
    return float(-(p * np.log2(safe)).sum())


def nearest_index(values, codebook_values) -> np.ndarray:
    """Index of the closest codebook entry; ties go to the smaller index."""
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    c = np.asarray(codebook_values, dtype=np.float64).reshape(1, -1)
    return np.argmin((v - c) ** 2, axis=1)


def map_quantize(post: WeightPosterior) -> np.ndarray:
    """MAP point estimate of every weight, shaped like ``post.w``.

    With a Gaussian kernel the per-weight scale cancels in the argmax, so this
    is nearest-neighbour assignment to the codebook.
    """
    omega = post.omega.data
    idx = nearest_index(post.w.data, omega)
    return omega[idx].reshape(post.w.shape)


def cross_entropy_identity_check(post: WeightPosterior) -> tuple:
    """Return ``(n H(P), sum_i sum_k P_ik (-log2 P_k))``; the two must agree."""
    p = kernel_probs(post).data
    agg = p.mean(axis=0)
    lhs = post.n * entropy_np(agg)
    safe = np.where(agg > 0, agg, 1.0)
    rhs = float((p * -np.log2(safe)[None, :]).sum())
    return lhs, rhs
