"""MNIST (IDX) and CIFAR-10 (binary) readers, one-hot targets and minibatching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .numerics import Mat, Rng

MNIST_IMAGE_MAGIC = 2051  # 0x00000803
MNIST_LABEL_MAGIC = 2049  # 0x00000801
CIFAR_RECORD = 1 + 3072
CIFAR_CLASSES = 10


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class BadRecordError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``images`` is N x D with one sample per row, pixels in [0, 1]."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.images.ndim != 2:
            raise DatasetError(f"images must be 2-D, got shape {self.images.shape}")
        if len(self.labels) != self.images.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {len(self.labels)} labels")
        if self.n_classes < 1:
            raise DatasetError("n_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class Minibatch:
    x: Mat  # D x b
    y: Mat  # n_classes x b, one-hot columns
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[1]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_header(raw: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(raw) >= 4:
        (got,) = struct.unpack(">i", raw[:4])
        if got != magic:
            raise BadMagicError(f"{path}: magic {got:#010x}, expected {magic:#010x}")
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: header needs {need} bytes, file has {len(raw)}")
    return struct.unpack(">" + "i" * ndims, raw[4:need])


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    count, rows, cols = _idx_header(raw, MNIST_IMAGE_MAGIC, 3, path)
    payload = count * rows * cols
    if len(raw) - 16 < payload:
        raise TruncatedFileError(
            f"{path}: expected {payload} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, count=payload, offset=16).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    (count,) = _idx_header(raw, MNIST_LABEL_MAGIC, 1, path)
    if len(raw) - 8 < count:
        raise TruncatedFileError(f"{path}: expected {count} labels, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def write_idx_images(path, pixels: np.ndarray, rows: int = 28, cols: int = 28) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, rows * cols)
    header = struct.pack(">iiii", MNIST_IMAGE_MAGIC, pixels.shape[0], rows, cols)
    Path(path).write_bytes(header + pixels.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">ii", MNIST_LABEL_MAGIC, len(labels)) + labels.tobytes())


def load_mnist(images_path, labels_path) -> Dataset:
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(labels) != pixels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {pixels.shape[0]} images, {labels_path} holds {len(labels)} labels")
    if len(labels) and labels.max() > 9:
        raise BadRecordError(f"{labels_path}: label {labels.max()} out of range")
    return Dataset(pixels.astype(np.float64) / 255.0, labels, 10)


def load_cifar10(batch_paths: Sequence) -> Dataset:
    """Concatenate CIFAR-10 binary batch files.

    Each record is one label byte followed by 3072 pixel bytes (1024 red,
    1024 green, 1024 blue); the channel-major layout is kept as is.
    """
    if not batch_paths:
        raise DatasetError("no CIFAR-10 batch files given")
    chunks = []
    for path in batch_paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise TruncatedFileError(
                f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR_CLASSES:
        bad = int(np.argmax(labels >= CIFAR_CLASSES))
        raise BadRecordError(f"record {bad}: label byte {labels[bad]} > 9")
    return Dataset(records[:, 1:].astype(np.float64) / 255.0, labels, CIFAR_CLASSES)


def one_hot(label: int, n_classes: int) -> Mat:
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} outside [0, {n_classes})")
    v = np.zeros((n_classes, 1))
    v[label, 0] = 1.0
    return v


def one_hot_columns(labels: np.ndarray, n_classes: int) -> Mat:
    labels = np.asarray(labels)
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    y = np.zeros((n_classes, len(labels)))
    y[labels, np.arange(len(labels))] = 1.0
    return y


def minibatches(ds: Dataset, batch_size: int, rng: Rng | None = None,
                shuffle: bool = True) -> Iterator[Minibatch]:
    """Yield one epoch of minibatches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        order = rng.permutation(ds.n)
    else:
        order = np.arange(ds.n)
    for start in range(0, ds.n, batch_size):
        idx = order[start:start + batch_size]
        yield Minibatch(ds.images[idx].T.copy(), one_hot_columns(ds.labels[idx], ds.n_classes),
                        ds.labels[idx])


def subset(ds: Dataset, n: int, rng: Rng) -> Dataset:
    """First ``n`` samples of a seeded permutation."""
    if not 1 <= n <= ds.n:
        raise ValueError(f"subset size must be in [1, {ds.n}], got {n}")
    return ds.take(rng.permutation(ds.n)[:n])
