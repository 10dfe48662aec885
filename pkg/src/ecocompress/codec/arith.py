"""Static-frequency binary arithmetic coder (integer range, carry-less).

Classic low/high/pending-bits scheme with a 32-bit state.  The frequency
total must stay at or below a quarter of the state range so that every symbol
with nonzero frequency keeps a nonempty sub-interval.
"""
from __future__ import annotations

from bisect import bisect_right
from typing import Iterable, Sequence

import numpy as np

from ..errors import ContractError, CorruptStreamError

STATE_BITS = 32
FULL = 1 << STATE_BITS
MASK = FULL - 1
HALF = FULL >> 1
QUARTER = FULL >> 2
MAX_TOTAL = QUARTER


def cumulative(freqs: Sequence[int]) -> list:
    cum = [0]
    for f in freqs:
        if f <= 0:
            raise ContractError("frequencies must be positive")
        cum.append(cum[-1] + int(f))
    if cum[-1] > MAX_TOTAL:
        raise ContractError(f"frequency total {cum[-1]} exceeds coder limit {MAX_TOTAL}")
    return cum


def encode_symbols(symbols: Iterable[int], freqs: Sequence[int]) -> tuple:
    """Return ``(packed_bytes, n_bits)`` for ``symbols`` under static ``freqs``."""
    cum = cumulative(freqs)
    total = cum[-1]
    low, high, pending = 0, MASK, 0
    bits: list = []
    emit = bits.append
    for s in symbols:
        span = high - low + 1
        high = low + span * cum[s + 1] // total - 1
        low = low + span * cum[s] // total
        while True:
            if high < HALF:
                emit(0)
                if pending:
                    bits.extend([1] * pending)
                    pending = 0
            elif low >= HALF:
                emit(1)
                if pending:
                    bits.extend([0] * pending)
                    pending = 0
                low -= HALF
                high -= HALF
            elif low >= QUARTER and high < HALF + QUARTER:
                pending += 1
                low -= QUARTER
                high -= QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
    # two more bits pin a point inside [low, high]
    pending += 1
    if low < QUARTER:
        emit(0)
        bits.extend([1] * pending)
    else:
        emit(1)
        bits.extend([0] * pending)
    n_bits = len(bits)
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes(), n_bits


def decode_symbols(data: bytes, n_bits: int, freqs: Sequence[int], count: int) -> list:
    """Inverse of :func:`encode_symbols`; ``count`` symbols are produced."""
    cum = cumulative(freqs)
    total = cum[-1]
    if n_bits > 8 * len(data):
        raise CorruptStreamError(f"stream declares {n_bits} bits but holds only {8 * len(data)}")
    stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:n_bits].tolist()
    stream.extend([0] * STATE_BITS)
    limit = len(stream)
    pos = STATE_BITS
    value = 0
    for b in stream[:STATE_BITS]:
        value = (value << 1) | b
    low, high = 0, MASK
    out = []
    for _ in range(count):
        span = high - low + 1
        offset = value - low
        if offset < 0 or offset >= span:
            raise CorruptStreamError("arithmetic decoder left its interval")
        target = ((offset + 1) * total - 1) // span
        s = bisect_right(cum, target) - 1
        out.append(s)
        high = low + span * cum[s + 1] // total - 1
        low = low + span * cum[s] // total
        while True:
            if high < HALF:
                pass
            elif low >= HALF:
                value -= HALF
                low -= HALF
                high -= HALF
            elif low >= QUARTER and high < HALF + QUARTER:
                value -= QUARTER
                low -= QUARTER
                high -= QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
            if pos >= limit:
                raise CorruptStreamError("arithmetic decoder ran past the end of the stream")
            value = (value << 1) | stream[pos]
            pos += 1
    return out
