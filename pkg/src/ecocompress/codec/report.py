"""Table-style compression summary (error, nonzero fraction, compression ratio)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .container import CompressedModel, to_bytes


@dataclass
class LayerReport:
    n: int
    K: int
    zeros: int
    payload_bits: float
    pmd_bits: float
    codebook_bits: int
    stream_bits: int
    total_bits: float


@dataclass
class CompressionReport:
    name: str
    error_pct: Optional[float]
    nonzero_pct: float
    sparsity_pct: float
    cr: float
    cr_container: float
    n_weights: int
    n_bias: int
    ideal_bits: float
    container_bits: int
    layers: List[LayerReport] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "model": self.name,
            "error_pct": self.error_pct,
            "nonzero_pct": self.nonzero_pct,
            "cr": self.cr,
            "cr_container": self.cr_container,
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.row()), lineterminator="\n")
        writer.writeheader()
        writer.writerow(self.row())
        return buf.getvalue()

    def table(self) -> str:
        err = "n/a" if self.error_pct is None else f"{self.error_pct:.2f}"
        head = f"{'Model':<24}{'Error [%]':>10}{'|W!=0|/|W| [%]':>16}{'CR':>9}"
        line = f"{self.name:<24}{err:>10}{self.nonzero_pct:>16.2f}{self.cr:>9.1f}"
        return f"{head}\n{'-' * len(head)}\n{line}"


def compression_report(model: CompressedModel, error_rate: Optional[float] = None,
                       baseline_bits_per_weight: int = 32, name: str = "model") -> CompressionReport:
    """Summarise a compressed model.

    ``cr`` divides the 32-bit baseline (weights and biases) by the ideal
    two-part length of the weights plus 32 bits per bias; ``cr_container``
    uses the real size of the serialised file instead.
    """
    layers = []
    for layer in model.layers:
        acc = layer.account()
        zero_idx = np.flatnonzero(layer.codebook.values == 0.0)
        zeros = int(layer.pmd.counts[zero_idx].sum()) if zero_idx.size else 0
        layers.append(LayerReport(layer.n, layer.codebook.K, zeros, acc.payload_bits, acc.pmd_bits,
                                  acc.codebook_bits, acc.actual_stream_bits, acc.total_bits))
    n_weights = sum(lr.n for lr in layers)
    n_bias = sum(int(layer.bias.size) for layer in model.layers)
    zeros = sum(lr.zeros for lr in layers)
    baseline = baseline_bits_per_weight * (n_weights + n_bias)
    ideal = sum(lr.total_bits for lr in layers)
    container_bits = 8 * len(to_bytes(model))
    return CompressionReport(
        name=name,
        error_pct=None if error_rate is None else 100.0 * error_rate,
        nonzero_pct=100.0 * (n_weights - zeros) / n_weights,
        sparsity_pct=100.0 * zeros / n_weights,
        cr=baseline / (ideal + 32 * n_bias),
        cr_container=baseline / container_bits,
        n_weights=n_weights,
        n_bias=n_bias,
        ideal_bits=ideal,
        container_bits=container_bits,
        layers=layers,
    )
