"""Run configuration: an INI file with a single ``[eco]`` section.

Example::

    [eco]
    arch = 784,300,100,10
    cardinalities = 3,3,33
    dataset = mnist
    data_dir = data/mnist
    alpha_max = 2e-5
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple, Union

from ..errors import ContractError

SECTION = "eco"


@dataclass
class TrainConfig:
    arch: Tuple[int, ...] = (784, 300, 100, 10)
    cardinalities: Tuple[int, ...] = (3, 3, 33)
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    out: str = "runs/eco"
    seed: int = 0
    batch_size: int = 128
    # pretraining
    pretrain_epochs: int = 5
    pretrain_steps: Optional[int] = None
    pretrain_lr: float = 1e-3
    # entropy-constrained training
    eco_epochs: int = 30
    steps: Optional[int] = None
    alpha_max: float = 2e-5
    alpha_ramp_frac: float = 0.6
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    log_every: int = 100
    eval_train_samples: int = 10000
    codebook_bits: int = 32
    sigma_init_frac: float = 0.25
    # synthetic blobs
    blob_train: int = 512
    blob_test: int = 256
    blob_spread: float = 0.6

    def __post_init__(self):
        self.arch = tuple(int(v) for v in self.arch)
        self.cardinalities = tuple(int(v) for v in self.cardinalities)
        self.validate()

    def validate(self) -> None:
        if len(self.arch) < 2 or any(v < 1 for v in self.arch):
            raise ContractError(f"arch needs >= 2 positive widths, got {self.arch}")
        if len(self.cardinalities) != len(self.arch) - 1:
            raise ContractError(f"{len(self.arch) - 1} weight layers but {len(self.cardinalities)} cardinalities")
        if any(k < 1 for k in self.cardinalities):
            raise ContractError("every cardinality must be >= 1")
        if self.dataset not in ("mnist", "blobs"):
            raise ContractError(f"dataset must be 'mnist' or 'blobs', got {self.dataset!r}")
        if self.codebook_bits not in (16, 32, 64):
            raise ContractError("codebook_bits must be 16, 32 or 64")
        if self.batch_size < 1 or self.log_every < 1:
            raise ContractError("batch_size and log_every must be positive")
        if self.alpha_max < 0 or not 0 < self.alpha_ramp_frac <= 1:
            raise ContractError("alpha_max must be >= 0 and alpha_ramp_frac in (0, 1]")
        if self.seed < 0:
            raise ContractError("seed must be nonnegative")

    def replace(self, **changes) -> "TrainConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        parser = configparser.ConfigParser()
        parser[SECTION] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[SECTION][f.name] = str(value)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _convert(name: str, raw: str, annotation: str):
    raw = raw.strip()
    if "Tuple" in annotation:
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    if raw.lower() in ("", "none") and "Optional" in annotation:
        return None
    try:
        if "int" in annotation:
            return int(raw)
        if "float" in annotation:
            return float(raw)
    except ValueError as exc:
        raise ContractError(f"config key {name!r}: cannot parse {raw!r}") from exc
    return raw


def parse_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ContractError(f"expected a comma-separated integer list, got {text!r}") from exc


def load_config(path: Union[str, Path, None] = None, **overrides) -> TrainConfig:
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ContractError(f"config file {path} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ContractError(f"config file {path}: {exc}") from exc
        if SECTION not in parser:
            raise ContractError(f"config file {path} has no [{SECTION}] section")
        known = {f.name: str(f.type) for f in fields(TrainConfig)}
        for key, raw in parser[SECTION].items():
            if key not in known:
                raise ContractError(f"config file {path}: unknown key {key!r}")
            values[key] = _convert(key, raw, known[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)
