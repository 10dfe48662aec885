"""Datasets: MNIST IDX ingestion, optional download helper, and synthetic blobs."""
from __future__ import annotations

import gzip
import hashlib
import logging
import shutil
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import ContractError, IngestionError

log = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
# md5 of the canonical gzip archives
MNIST_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
MNIST_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, d] float64
    labels: np.ndarray  # [N] int64
    split: str = "train"
    n_classes: int = 10

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ContractError(f"inputs must be a non-empty [N x d] array, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ContractError("one label per example required")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ContractError(f"labels outside [0, {self.n_classes})")
        if self.inputs.min() < 0.0 or self.inputs.max() > 1.0:
            raise ContractError("inputs must be scaled to [0, 1]")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, count: int) -> "Dataset":
        count = min(count, len(self))
        return Dataset(self.inputs[:count], self.labels[:count], self.split, self.n_classes)


def _read_raw(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except (OSError, EOFError) as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    """IDX3 image file -> uint8 array ``[count, rows*cols]``."""
    path = Path(path)
    raw = _read_raw(path)
    if len(raw) < 16:
        raise IngestionError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IngestionError(f"{path}: bad magic {magic}, expected {IMAGE_MAGIC}")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise IngestionError(f"{path}: expected {expected} bytes for {count} images, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    raw = _read_raw(path)
    if len(raw) < 8:
        raise IngestionError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise IngestionError(f"{path}: bad magic {magic}, expected {LABEL_MAGIC}")
    if len(raw) != 8 + count:
        raise IngestionError(f"{path}: expected {8 + count} bytes for {count} labels, found {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size and labels.max() > 9:
        raise IngestionError(f"{path}: label value {labels.max()} outside 0-9")
    return labels


def _locate(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise IngestionError(f"{root / stem}: file not found (also tried .gz)")


def mnist_available(path: Union[str, Path]) -> bool:
    root = Path(path)
    return all((root / s).exists() or (root / f"{s}.gz").exists() for s in MNIST_FILES.values())


def load_mnist(path: Union[str, Path]) -> tuple:
    """Load the four IDX files under ``path`` into train / test datasets, pixels in [0, 1]."""
    root = Path(path)
    out = []
    for split, img_key, lab_key in (("train", "train_images", "train_labels"),
                                    ("test", "test_images", "test_labels")):
        img_path = _locate(root, MNIST_FILES[img_key])
        lab_path = _locate(root, MNIST_FILES[lab_key])
        images = read_idx_images(img_path)
        labels = read_idx_labels(lab_path)
        if images.shape[0] != labels.shape[0]:
            raise IngestionError(f"{img_path}: {images.shape[0]} images but {lab_path} has {labels.shape[0]} labels")
        out.append(Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), split, 10))
    return tuple(out)


def fetch_mnist(dest: Union[str, Path], base_url: str = MNIST_MIRROR) -> Path:
    """Download and verify the canonical archives into ``dest`` (needs network access)."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for name, md5 in MNIST_MD5.items():
        target = dest / name
        if not target.exists():
            log.info("downloading %s", base_url + name)
            with urllib.request.urlopen(base_url + name, timeout=60) as resp, open(target, "wb") as fh:
                shutil.copyfileobj(resp, fh)
        digest = hashlib.md5(target.read_bytes()).hexdigest()
        if digest != md5:
            target.unlink()
            raise IngestionError(f"{target}: md5 {digest} does not match {md5}")
    return dest


def make_blobs(n_train: int = 512, n_test: int = 256, dim: int = 16, n_classes: int = 4,
               spread: float = 0.6, seed: int = 0) -> tuple:
    """Gaussian class clusters, min-max scaled to [0, 1] with training statistics."""
    rng = np.random.default_rng([int(seed), 424242])
    centers = rng.normal(size=(n_classes, dim))

    def draw(count):
        labels = rng.integers(0, n_classes, size=count)
        return centers[labels] + spread * rng.normal(size=(count, dim)), labels

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    lo, hi = x_tr.min(axis=0), x_tr.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def scale(x):
        return np.clip((x - lo) / span, 0.0, 1.0)

    return (Dataset(scale(x_tr), y_tr, "train", n_classes),
            Dataset(scale(x_te), y_te, "test", n_classes))
