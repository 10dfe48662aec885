"""The ``.ecm`` compressed-model container.

Little-endian layout::

    'ECM1' | u16 version | u16 layer_count
    per layer:
        u32 n | u16 K | u8 b
        K codebook values as IEEE floats of width b
        K counts, each ceil(log2(n+1)) bits, MSB first, zero-padded to a byte
        u32 bias_count | bias_count float32 biases
        u64 stream_bits | ceil(stream_bits / 8) stream bytes
    u32 CRC-32 of every preceding byte

A layer's shape is ``(n // bias_count, bias_count)``.
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from ..discrete import Codebook
from ..errors import ContractError, CorruptStreamError, IntegrityError
from ..layers import QuantizedDense
from .pmd import Bitstream, BitAccount, EmpiricalPMD, bit_account, decode, empirical_pmd, encode

MAGIC = b"ECM1"
VERSION = 1
_FLOAT_CODE = {16: "<f2", 32: "<f4", 64: "<f8"}


@dataclass
class CompressedLayer:
    codebook: Codebook
    pmd: EmpiricalPMD
    bias: np.ndarray  # float32 values
    stream: Bitstream

    @property
    def n(self) -> int:
        return self.pmd.n

    @property
    def shape(self) -> tuple:
        out = int(self.bias.size)
        return (self.n // out, out)

    def account(self) -> BitAccount:
        return bit_account(self.pmd, self.codebook, self.stream.n_bits)


@dataclass
class CompressedModel:
    layers: List[CompressedLayer]
    version: int = VERSION

    def accounts(self) -> list:
        return [layer.account() for layer in self.layers]


def count_width(n: int) -> int:
    return max(1, int(n).bit_length())  # == ceil(log2(n + 1))


def compress_layer(layer: QuantizedDense) -> CompressedLayer:
    pmd = empirical_pmd(layer.weights, layer.codebook)
    stream = encode(layer.weights, pmd, layer.codebook)
    bias = layer.bias.astype(np.float32)
    return CompressedLayer(layer.codebook, pmd, bias, stream)


def compress_model(layers: Sequence[QuantizedDense]) -> CompressedModel:
    return CompressedModel([compress_layer(layer) for layer in layers])


def decompress_layer(layer: CompressedLayer) -> QuantizedDense:
    values = decode(layer.stream, layer.pmd, layer.codebook, layer.n)
    return QuantizedDense(values.reshape(layer.shape), layer.bias.astype(np.float64), layer.codebook)


def decompress_model(model: CompressedModel) -> list:
    return [decompress_layer(layer) for layer in model.layers]


# ---------------------------------------------------------------------------
def _pack_counts(counts: np.ndarray, width: int) -> bytes:
    bits = ((counts[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def _unpack_counts(raw: bytes, K: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: K * width].reshape(K, width)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return (bits.astype(np.int64) * weights).sum(axis=1)


def to_bytes(model: CompressedModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", model.version, len(model.layers)))
    for layer in model.layers:
        n, K, b = layer.n, layer.codebook.K, layer.codebook.bits
        if n >= 1 << 32 or K >= 1 << 16:
            raise IntegrityError(f"layer too large for the container (n={n}, K={K})")
        buf.write(struct.pack("<IHB", n, K, b))
        buf.write(layer.codebook.values.astype(_FLOAT_CODE[b]).tobytes())
        buf.write(_pack_counts(layer.pmd.counts, count_width(n)))
        buf.write(struct.pack("<I", layer.bias.size))
        buf.write(layer.bias.astype("<f4").tobytes())
        buf.write(struct.pack("<Q", layer.stream.n_bits))
        buf.write(layer.stream.data[: (layer.stream.n_bits + 7) // 8])
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CorruptStreamError("container truncated")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> CompressedModel:
    if len(data) < 12:
        raise CorruptStreamError("container truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptStreamError("checksum mismatch")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CorruptStreamError("bad magic; not an .ecm file")
    version, n_layers = r.unpack("<HH")
    if version != VERSION:
        raise CorruptStreamError(f"unsupported container version {version}")
    layers = []
    for _ in range(n_layers):
        n, K, b = r.unpack("<IHB")
        if b not in _FLOAT_CODE:
            raise CorruptStreamError(f"bad codebook precision {b}")
        values = np.frombuffer(r.take(K * b // 8), dtype=_FLOAT_CODE[b]).astype(np.float64)
        width = count_width(n)
        counts = _unpack_counts(r.take((K * width + 7) // 8), K, width)
        (bias_count,) = r.unpack("<I")
        bias = np.frombuffer(r.take(4 * bias_count), dtype="<f4").astype(np.float32)
        (n_bits,) = r.unpack("<Q")
        stream = Bitstream(r.take((n_bits + 7) // 8), n_bits)
        if counts.sum() != n or bias_count == 0 or n % bias_count:
            raise CorruptStreamError("layer header is inconsistent")
        try:
            codebook = Codebook(values, b)
        except ContractError as exc:
            raise CorruptStreamError(f"invalid codebook: {exc}") from exc
        layers.append(CompressedLayer(codebook, EmpiricalPMD(counts), bias, stream))
    if r.pos != len(body):
        raise CorruptStreamError("trailing bytes after last layer")
    return CompressedModel(layers, version)


def write_ecm(model: CompressedModel, path: Union[str, Path]) -> int:
    data = to_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def read_ecm(path: Union[str, Path]) -> CompressedModel:
    return from_bytes(Path(path).read_bytes())
