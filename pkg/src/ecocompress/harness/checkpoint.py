"""Binary checkpoints for dense, stochastic and quantized networks.

Little-endian layout::

    'ECK1' | u8 kind (1 dense, 2 stochastic, 3 quantized) | u16 layer_count
    u64 noise_seed | f64 recorded metric (NaN when absent)
    per layer: u32 fan_in | u32 fan_out | u16 K | u8 bits, then float64 arrays
        dense:       W[fan_in*fan_out], b[fan_out]
        stochastic:  w[...], log_sigma[...], omega[K], b[fan_out]
        quantized:   codebook[K], W[...], b[fan_out]
    u32 CRC-32 of every preceding byte

Matrices are row-major ``[fan_in, fan_out]``.
"""
from __future__ import annotations

import io
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..discrete import Codebook, WeightPosterior
from ..errors import ContractError, CorruptStreamError
from ..layers import DenseLayer, NoiseSource, QuantizedDense, StochasticDense
from ..tensor import Tensor

MAGIC = b"ECK1"
DENSE, STOCHASTIC, QUANTIZED = 1, 2, 3
KIND_NAMES = {DENSE: "dense", STOCHASTIC: "stochastic", QUANTIZED: "quantized"}


@dataclass
class Checkpoint:
    kind: int
    layers: list
    seed: int = 0
    metric: Optional[float] = None

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]


def _kind_of(layers) -> int:
    if all(isinstance(layer, DenseLayer) for layer in layers):
        return DENSE
    if all(isinstance(layer, StochasticDense) for layer in layers):
        return STOCHASTIC
    if all(isinstance(layer, QuantizedDense) for layer in layers):
        return QUANTIZED
    raise ContractError("checkpoint layers must all be of one kind")


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(layers, seed: int = 0, metric: Optional[float] = None) -> bytes:
    kind = _kind_of(layers)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BHQd", kind, len(layers), int(seed), math.nan if metric is None else metric))
    for layer in layers:
        fan_in, fan_out = layer.shape
        if kind == DENSE:
            buf.write(struct.pack("<IIHB", fan_in, fan_out, 0, 0))
            buf.write(_f64(layer.weight.data) + _f64(layer.bias.data))
        elif kind == STOCHASTIC:
            post = layer.posterior
            buf.write(struct.pack("<IIHB", fan_in, fan_out, post.K, post.bits))
            buf.write(_f64(post.w.data) + _f64(post.log_sigma.data) + _f64(post.omega.data))
            buf.write(_f64(layer.bias.data))
        else:
            cb = layer.codebook
            buf.write(struct.pack("<IIHB", fan_in, fan_out, cb.K, cb.bits))
            buf.write(_f64(cb.values) + _f64(layer.weights) + _f64(layer.bias))
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes) -> Checkpoint:
    if len(data) < 27:
        raise CorruptStreamError("checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptStreamError("checkpoint checksum mismatch")
    if body[:4] != MAGIC:
        raise CorruptStreamError("bad magic; not a checkpoint file")
    kind, count, seed, metric = struct.unpack_from("<BHQd", body, 4)
    if kind not in KIND_NAMES:
        raise CorruptStreamError(f"unknown checkpoint kind {kind}")
    pos = 4 + struct.calcsize("<BHQd")
    noise = NoiseSource(seed)

    def take(count_):
        nonlocal pos
        end = pos + 8 * count_
        if end > len(body):
            raise CorruptStreamError("checkpoint truncated")
        arr = np.frombuffer(body, dtype="<f8", count=count_, offset=pos).astype(np.float64)
        pos = end
        return arr

    layers: List = []
    for i in range(count):
        if pos + 11 > len(body):
            raise CorruptStreamError("checkpoint truncated")
        fan_in, fan_out, K, bits = struct.unpack_from("<IIHB", body, pos)
        pos += 11
        shape = (fan_in, fan_out)
        n = fan_in * fan_out
        if kind == DENSE:
            w, b = take(n).reshape(shape), take(fan_out)
            layers.append(DenseLayer(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)))
        elif kind == STOCHASTIC:
            w, ls, om, b = take(n).reshape(shape), take(n).reshape(shape), take(K), take(fan_out)
            post = WeightPosterior(Tensor(w, requires_grad=True), Tensor(ls, requires_grad=True),
                                   Tensor(om, requires_grad=True), bits)
            layers.append(StochasticDense(post, Tensor(b, requires_grad=True), noise, i))
        else:
            cb, w, b = take(K), take(n).reshape(shape), take(fan_out)
            layers.append(QuantizedDense(w, b, Codebook(cb, bits)))
    if pos != len(body):
        raise CorruptStreamError("trailing bytes in checkpoint")
    return Checkpoint(kind, layers, seed, None if math.isnan(metric) else metric)


def save_checkpoint(path: Union[str, Path], layers, seed: int = 0, metric: Optional[float] = None) -> None:
    Path(path).write_bytes(dumps(layers, seed, metric))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return loads(Path(path).read_bytes())
