"""Training traces and the checks run on them."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np

CSV_HEADER = ["step", "var_loss", "quant_loss", "H_P_total", "H_mu_total",
              "sigma2_mean", "sigma2_std", "err_cont", "err_quant"]
LAYER_CSV_HEADER = ["step", "layer", "n", "K", "H_P", "H_mu"]


@dataclass
class MetricsRow:
    step: int
    alpha: float
    var_loss: float
    quant_loss: float
    layer_n: List[int]
    layer_K: List[int]
    H_P: List[float]  # bits per weight, per layer
    H_mu: List[float]
    sigma2_mean: float
    sigma2_std: float
    err_cont: float
    err_quant: float

    @property
    def H_P_total(self) -> float:
        return float(sum(n * h for n, h in zip(self.layer_n, self.H_P)))

    @property
    def H_mu_total(self) -> float:
        return float(sum(n * h for n, h in zip(self.layer_n, self.H_mu)))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class MetricsTrace:
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError(f"trace steps must increase ({row.step} after {self.rows[-1].step})")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(v) for v in (r.step, r.var_loss, r.quant_loss, r.H_P_total, r.H_mu_total,
                                          r.sigma2_mean, r.sigma2_std, r.err_cont, r.err_quant)])
        return buf.getvalue()

    def layers_to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LAYER_CSV_HEADER)
        for r in self.rows:
            for i, (n, K, hp, hm) in enumerate(zip(r.layer_n, r.layer_K, r.H_P, r.H_mu)):
                w.writerow([r.step, i, n, K, _fmt(hp), _fmt(hm)])
        return buf.getvalue()

    def write(self, out_dir: Union[str, Path]) -> None:
        out_dir = Path(out_dir)
        (out_dir / "metrics.csv").write_text(self.to_csv())
        (out_dir / "metrics_layers.csv").write_text(self.layers_to_csv())


def entropy_bound_violations(trace: MetricsTrace, tol: float = 1e-9) -> list:
    """``(step, layer, H_mu, H_P)`` for every logged point where ``H_mu > H_P + tol``."""
    bad = []
    for r in trace.rows:
        for i, (hp, hm) in enumerate(zip(r.H_P, r.H_mu)):
            if hm > hp + tol:
                bad.append((r.step, i, hm, hp))
    return bad


def variance_shrinks(trace: MetricsTrace) -> bool:
    return trace.rows[-1].sigma2_mean < trace.rows[0].sigma2_mean


def loss_gap_windows(trace: MetricsTrace, frac: float = 0.1) -> tuple:
    """Mean ``|var_loss - quant_loss|`` over the first and last ``frac`` of logged rows."""
    k = max(1, int(math.ceil(frac * len(trace.rows))))
    gaps = [abs(r.var_loss - r.quant_loss) for r in trace.rows]
    return float(np.mean(gaps[:k])), float(np.mean(gaps[-k:]))


def trace_checks(trace: MetricsTrace) -> dict:
    first, last = loss_gap_windows(trace)
    return {
        "entropy_bound": not entropy_bound_violations(trace),
        "variance_shrinks": variance_shrinks(trace),
        "loss_gap_narrows": last < first,
    }
