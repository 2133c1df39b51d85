"""Dataset decoders and the augmentation pipeline.

Images come out as float32 NHWC arrays scaled to [0, 1]. Every decoder
checks the file length implied by its header (or record size) and reports
the offending file and byte offset on mismatch.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES = 2051
IDX_LABELS = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_PER_BATCH = 10000
STL_SIDE = 96
STL_RECORD = 3 * STL_SIDE * STL_SIDE

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
STL_FILES = {
    "unlabeled": ("unlabeled_X.bin", None),
    "train": ("train_X.bin", "train_y.bin"),
    "test": ("test_X.bin", "test_y.bin"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray | None
    split: str

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise FormatError(f"{len(self.labels)} labels for {len(self.images)} images")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
                raise FormatError(f"labels outside [0, 9]: min {self.labels.min()}, max {self.labels.max()}")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], None if self.labels is None else self.labels[index], self.split)

    def take(self, n: int | None) -> "Dataset":
        return self if n is None or n >= len(self) else self.subset(np.arange(n))


def concat(parts: list[Dataset], split: str) -> Dataset:
    labels = None
    if all(p.labels is not None for p in parts):
        labels = np.concatenate([p.labels for p in parts])
    return Dataset(np.concatenate([p.images for p in parts]), labels, split)


def _read(path: Path) -> bytes:
    """Raw bytes; transparently accepts a ``.gz`` sibling."""
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        with gzip.open(gz) as fh:
            return fh.read()
    raise FileNotFoundError(f"missing dataset file {path}")


def _scale(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


# -- MNIST (IDX) ----------------------------------------------------------


def decode_idx_images(data: bytes, source: str) -> np.ndarray:
    if len(data) < 16:
        raise FormatError(f"{source}: header truncated at byte offset {len(data)} (need 16 bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES:
        raise FormatError(f"{source}: magic {magic} at byte offset 0, expected {IDX_IMAGES}")
    expected = 16 + n * rows * cols
    if len(data) != expected:
        raise FormatError(f"{source}: header implies {expected} bytes for {n} images, file has {len(data)} (mismatch at byte offset {min(len(data), expected)})")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols, 1)


def decode_idx_labels(data: bytes, source: str) -> np.ndarray:
    if len(data) < 8:
        raise FormatError(f"{source}: header truncated at byte offset {len(data)} (need 8 bytes)")
    magic, n = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS:
        raise FormatError(f"{source}: magic {magic} at byte offset 0, expected {IDX_LABELS}")
    if len(data) != 8 + n:
        raise FormatError(f"{source}: header implies {8 + n} bytes for {n} labels, file has {len(data)} (mismatch at byte offset {min(len(data), 8 + n)})")
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape[:3]
    return struct.pack(">IIII", IDX_IMAGES, n, rows, cols) + images.tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS, len(labels)) + labels.tobytes()


def load_mnist(directory: str | os.PathLike, split: str = "train") -> Dataset:
    d = Path(directory)
    img_name, lbl_name = MNIST_FILES[split]
    images = decode_idx_images(_read(d / img_name), str(d / img_name))
    labels = decode_idx_labels(_read(d / lbl_name), str(d / lbl_name))
    if len(labels) != len(images):
        raise FormatError(
            f"{d / lbl_name}: {len(labels)} labels but {d / img_name} holds {len(images)} images "
            f"(label file ends at byte offset {8 + len(labels)})"
        )
    return Dataset(_scale(images), labels, split)


# -- CIFAR-10 (binary version) --------------------------------------------


def decode_cifar_batch(data: bytes, source: str, enforce_count: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if len(data) % CIFAR_RECORD:
        whole = len(data) // CIFAR_RECORD
        raise FormatError(f"{source}: truncated record at byte offset {whole * CIFAR_RECORD} ({len(data)} bytes is not a multiple of {CIFAR_RECORD})")
    n = len(data) // CIFAR_RECORD
    if enforce_count and n != CIFAR_PER_BATCH:
        raise FormatError(f"{source}: {n} records, expected {CIFAR_PER_BATCH} (file ends at byte offset {len(data)})")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    # channel planes (R, G, B), each 32x32 row-major
    images = rec[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def encode_cifar_batch(images: np.ndarray, labels: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8).transpose(0, 3, 1, 2).reshape(len(images), -1)
    labels = np.asarray(labels, dtype=np.uint8)[:, None]
    return np.concatenate([labels, images], axis=1).tobytes()


def load_cifar10(directory: str | os.PathLike, split: str = "train", enforce_count: bool = True) -> Dataset:
    d = Path(directory)
    imgs, lbls = [], []
    for name in CIFAR_FILES[split]:
        i, l = decode_cifar_batch(_read(d / name), str(d / name), enforce_count)
        imgs.append(i)
        lbls.append(l)
    return Dataset(_scale(np.concatenate(imgs)), np.concatenate(lbls), split)


# -- STL-10 (binary version) ----------------------------------------------


def decode_stl_images(data: bytes, source: str) -> np.ndarray:
    if len(data) % STL_RECORD:
        whole = len(data) // STL_RECORD
        raise FormatError(f"{source}: truncated image at byte offset {whole * STL_RECORD} ({len(data)} bytes is not a multiple of {STL_RECORD})")
    n = len(data) // STL_RECORD
    # each channel plane is stored column-major: (C, W, H) -> (H, W, C)
    return np.frombuffer(data, dtype=np.uint8).reshape(n, 3, STL_SIDE, STL_SIDE).transpose(0, 3, 2, 1)


def encode_stl_images(images: np.ndarray) -> bytes:
    return np.ascontiguousarray(np.asarray(images, dtype=np.uint8).transpose(0, 3, 2, 1)).tobytes()


def decode_stl_labels(data: bytes, source: str, count: int) -> np.ndarray:
    if len(data) != count:
        raise FormatError(f"{source}: {len(data)} labels for {count} images (mismatch at byte offset {min(len(data), count)})")
    raw = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    bad = np.flatnonzero((raw < 1) | (raw > 10))
    if bad.size:
        raise FormatError(f"{source}: label {raw[bad[0]]} at byte offset {bad[0]} is outside 1..10")
    return raw - 1


def load_stl10(directory: str | os.PathLike, split: str = "train") -> Dataset:
    """Decode one split; ``"pretrain"`` is the union of unlabeled and train."""
    if split == "pretrain":
        parts = [load_stl10(directory, "unlabeled"), load_stl10(directory, "train")]
        return Dataset(np.concatenate([p.images for p in parts]), None, "pretrain")
    d = Path(directory)
    x_name, y_name = STL_FILES[split]
    images = decode_stl_images(_read(d / x_name), str(d / x_name))
    labels = None
    if y_name is not None:
        labels = decode_stl_labels(_read(d / y_name), str(d / y_name), len(images))
    return Dataset(_scale(images), labels, split)


LOADERS = {"mnist": load_mnist, "cifar10": load_cifar10, "stl10": load_stl10}


# -- augmentation and batching --------------------------------------------


@dataclass
class AugmentConfig:
    max_translate: int = 0
    mirror: bool = False
    seed: int = 0


def translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift content by (dy, dx) pixels; vacated pixels are zero."""
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    src_y, dst_y = slice(max(0, -dy), min(h, h - dy)), slice(max(0, dy), min(h, h + dy))
    src_x, dst_x = slice(max(0, -dx), min(w, w - dx)), slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def augment(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random integer translation in [-t, t]^2, then a coin-flip horizontal mirror."""
    t = cfg.max_translate
    if t and 2 * t >= min(batch.shape[1:3]):
        raise ConfigError(f"max_translate {t} must be below half of the image side {min(batch.shape[1:3])}")
    if not t and not cfg.mirror:
        return batch
    out = np.empty_like(batch)
    for k, img in enumerate(batch):
        dy, dx = (int(v) for v in rng.integers(-t, t + 1, size=2)) if t else (0, 0)
        img = translate(img, dy, dx) if (dy or dx) else img
        if cfg.mirror and rng.random() < 0.5:
            img = img[:, ::-1]
        out[k] = img
    return out


def batch_iter(ds: Dataset, batch_size: int, shuffle: bool, rng: np.random.Generator | None = None, drop_last: bool = False) -> Iterator[np.ndarray]:
    """Yield index arrays covering one epoch."""
    n = len(ds)
    order = rng.permutation(n) if shuffle else np.arange(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield order[start : start + batch_size]
