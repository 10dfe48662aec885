"""Empirical symbol statistics, two-part bit accounting, and index-stream coding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..discrete import Codebook, entropy_np
from ..errors import ContractError, CorruptStreamError, IntegrityError
from . import arith


@dataclass(frozen=True)
class EmpiricalPMD:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if counts.size < 1 or np.any(counts < 0) or counts.sum() < 1:
            raise ContractError("counts must be nonnegative with a positive total")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def K(self) -> int:
        return int(self.counts.size)

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    def entropy(self) -> float:
        return entropy_np(self.probs)


@dataclass(frozen=True)
class BitAccount:
    payload_bits: float
    pmd_bits: float
    codebook_bits: int
    actual_stream_bits: int

    @property
    def total_bits(self) -> float:
        """Idealised two-part length: payload + PMD + codebook."""
        return self.payload_bits + self.pmd_bits + self.codebook_bits


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    n_bits: int


def codebook_indices(weights, codebook: Codebook) -> np.ndarray:
    """Map each weight to its codebook index; every weight must match a value exactly."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    vals = codebook.values
    idx = np.clip(np.searchsorted(vals, w), 0, vals.size - 1)
    bad = vals[idx] != w
    if np.any(bad):
        first = w[np.argmax(bad)]
        raise IntegrityError(f"{int(bad.sum())} weights are not codebook values (first: {first!r})")
    return idx


def empirical_pmd(weights, codebook: Codebook) -> EmpiricalPMD:
    idx = codebook_indices(weights, codebook)
    if idx.size == 0:
        raise ContractError("cannot build a PMD for an empty layer")
    return EmpiricalPMD(np.bincount(idx, minlength=codebook.K))


def bit_account(pmd: EmpiricalPMD, codebook: Codebook, stream_len: int) -> BitAccount:
    n, K = pmd.n, codebook.K
    return BitAccount(
        payload_bits=n * pmd.entropy(),
        pmd_bits=K * math.log2(n),
        codebook_bits=K * codebook.bits,
        actual_stream_bits=int(stream_len),
    )


def _alphabet(pmd: EmpiricalPMD) -> tuple:
    """Used symbols only: zero-count entries would get an empty coding interval."""
    used = np.flatnonzero(pmd.counts)
    remap = np.full(pmd.K, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return used, remap, pmd.counts[used].tolist()


def encode(weights, pmd: EmpiricalPMD, codebook: Codebook) -> Bitstream:
    """Arithmetic-code the codebook indices of ``weights`` with static frequencies ``pmd``."""
    idx = codebook_indices(weights, codebook)
    if pmd.K != codebook.K:
        raise IntegrityError(f"PMD has {pmd.K} symbols but codebook has {codebook.K}")
    if idx.size != pmd.n:
        raise IntegrityError(f"PMD counts {pmd.n} symbols but {idx.size} weights were given")
    used, remap, freqs = _alphabet(pmd)
    symbols = remap[idx]
    if np.any(symbols < 0):
        raise IntegrityError("weight uses a codebook value whose count is zero")
    if used.size == 1:
        return Bitstream(b"", 0)
    data, n_bits = arith.encode_symbols(symbols.tolist(), freqs)
    return Bitstream(data, n_bits)


def decode(stream: Bitstream, pmd: EmpiricalPMD, codebook: Codebook, n: int) -> np.ndarray:
    """Recover the ``n`` quantized weight values (flat float64 array)."""
    if pmd.K != codebook.K or pmd.n != n:
        raise IntegrityError("PMD, codebook and symbol count are inconsistent")
    used, _, freqs = _alphabet(pmd)
    if used.size == 1:
        return np.full(n, codebook.values[used[0]])
    symbols = np.asarray(arith.decode_symbols(stream.data, stream.n_bits, freqs, n), dtype=np.int64)
    if not np.array_equal(np.bincount(symbols, minlength=used.size), freqs):
        raise CorruptStreamError("decoded symbol counts disagree with the stored PMD")
    return codebook.values[used[symbols]]
