"""IDX (MNIST) parsing, deterministic example streams and a synthetic blob set."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import (CountMismatchError, MagicMismatchError, ParameterError,
                     TruncatedFileError)
from .nn import Rng

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (784, N) in [0, 1]
    labels: np.ndarray  # (N,) int64
    image_shape: tuple = (28, 28)

    def __post_init__(self):
        if self.images.shape[1] != self.labels.shape[0]:
            raise ParameterError(
                f"{self.images.shape[1]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[:, idx], self.labels[idx], self.image_shape)


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw: bytes, path, magic: int, ndims: int):
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise TruncatedFileError(f"header needs {need} bytes, file has {len(raw)}", path, len(raw))
    found = struct.unpack_from(">I", raw, 0)[0]
    if found != magic:
        raise MagicMismatchError(f"magic number {found}, expected {magic}", path, 0)
    return struct.unpack_from(f">{ndims}I", raw, 4), need


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image file (magic 2051) and label file (magic 2049).

    Either file may be gzip-compressed. Pixels are scaled by 1/255.
    """
    img_raw = _read_bytes(images_path)
    (n, rows, cols), off = _header(img_raw, images_path, IMAGES_MAGIC, 3)
    need = off + n * rows * cols
    if len(img_raw) < need:
        raise TruncatedFileError(
            f"{n} images of {rows}x{cols} need {need} bytes, file has {len(img_raw)}",
            images_path, len(img_raw))
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=n * rows * cols, offset=off)

    lab_raw = _read_bytes(labels_path)
    (m,), loff = _header(lab_raw, labels_path, LABELS_MAGIC, 1)
    if m != n:
        raise CountMismatchError(f"label count {m} != image count {n}", labels_path, 4)
    if len(lab_raw) < loff + m:
        raise TruncatedFileError(f"{m} labels need {loff + m} bytes, file has {len(lab_raw)}",
                                 labels_path, len(lab_raw))
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=m, offset=loff).astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ParameterError(f"{labels_path}: label {labels[bad]} at byte offset {loff + bad} is not a digit")

    images = pixels.reshape(n, rows * cols).T / 255.0
    return Dataset(images, labels, (rows, cols))


def idx_bytes(ds: Dataset):
    """Serialise a dataset back to ``(image_bytes, label_bytes)`` in IDX layout."""
    rows, cols = ds.image_shape
    pixels = np.rint(ds.images.T * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IMAGES_MAGIC, len(ds), rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes()
    return img, lab


def write_idx(ds: Dataset, images_path, labels_path, compress: bool = False) -> None:
    img, lab = idx_bytes(ds)
    if compress:
        # mtime=0 keeps the archive bytes reproducible
        img, lab = gzip.compress(img, mtime=0), gzip.compress(lab, mtime=0)
    Path(images_path).write_bytes(img)
    Path(labels_path).write_bytes(lab)


def _find(data_dir: Path, name: str) -> Path:
    for candidate in (data_dir / name, data_dir / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{data_dir}: neither {name} nor {name}.gz found")


def load_mnist(data_dir, split: str = "train") -> Dataset:
    """Load one split from a directory holding the four standard IDX file names."""
    data_dir = Path(data_dir)
    img_name, lab_name = MNIST_FILES[split]
    return load_idx(_find(data_dir, img_name), _find(data_dir, lab_name))


def stream(ds: Dataset, rng: Rng) -> Iterator[tuple[np.ndarray, int]]:
    """Endless ``(x, y)`` pairs, one freshly shuffled epoch after another.

    ``x`` is a ``(784, 1)`` column.
    """
    if len(ds) == 0:
        raise ParameterError("cannot stream an empty dataset")
    while True:
        for i in rng.permutation(len(ds)):
            yield ds.images[:, i:i + 1], int(ds.labels[i])


def synthetic_blobs(rng: Rng, classes: int = 10, per_class: int = 100, dim: int = 784,
                    spread: float = 0.1) -> Dataset:
    """Gaussian clusters around uniform random means, clipped to ``[0, 1]``.

    Samples are grouped by class (class 0 first).
    """
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    means = rng.random((dim, classes))
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal((dim, classes * per_class))
    images = np.clip(means[:, labels] + spread * noise, 0.0, 1.0)
    side = int(round(np.sqrt(dim)))
    shape = (side, side) if side * side == dim else (dim, 1)
    return Dataset(images, labels.astype(np.int64), shape)


def nearest_mean_accuracy(train: Dataset, test: Dataset) -> float:
    """Accuracy of a nearest-class-mean classifier (Euclidean), by brute force."""
    classes = np.unique(train.labels)
    means = np.stack([train.images[:, train.labels == c].mean(axis=1) for c in classes], axis=1)
    d2 = ((test.images[:, :, None] - means[:, None, :]) ** 2).sum(axis=0)
    pred = classes[np.argmin(d2, axis=1)]
    return float(np.mean(pred == test.labels))


def split(ds: Dataset, n_val: int, rng: Optional[Rng] = None):
    """Random ``(train, val)`` split with ``n_val`` validation items."""
    order = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    return ds.subset(np.sort(order[n_val:])), ds.subset(np.sort(order[:n_val]))
