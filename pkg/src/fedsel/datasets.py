"""Built-in desk-scale datasets and loaders for standard binary formats."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

from fedsel.exceptions import ConfigurationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072


def load_digits() -> Tuple[np.ndarray, np.ndarray]:
    """8x8 handwritten digits (1797 samples, 10 classes), scaled to [0, 1]."""
    from sklearn.datasets import load_digits as _load

    data = _load()
    return data.data.astype(np.float64) / 16.0, data.target.astype(np.int64)


def make_blobs(n_samples: int = 2000, n_features: int = 16, n_classes: int = 10,
               cluster_std: float = 1.0, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs, one per class, with balanced class sizes."""
    from sklearn.datasets import make_blobs as _make

    X, y = _make(n_samples=n_samples, n_features=n_features, centers=n_classes,
                 cluster_std=cluster_std, center_box=(-4.0, 4.0), random_state=seed)
    return X.astype(np.float64), y.astype(np.int64)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file (images: magic 0x803, labels: 0x801)."""
    with _open(path) as fh:
        header = fh.read(4)
        if len(header) != 4:
            raise ConfigurationError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">I", header)
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise ConfigurationError(f"{path}: bad IDX magic 0x{magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        payload = fh.read()
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise ConfigurationError(f"{path}: expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx_pair(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
    """FMNIST-style image/label IDX pair, flattened and scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConfigurationError("image and label counts differ")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return X, labels.astype(np.int64)


def load_cifar_batches(*paths) -> Tuple[np.ndarray, np.ndarray]:
    """CIFAR-10 binary batches: each record is one label byte plus 3072 pixel bytes."""
    xs, ys = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise ConfigurationError(f"{path}: size is not a whole number of records")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(records[:, 0].astype(np.int64))
        xs.append(records[:, 1:].astype(np.float64) / 255.0)
    if not xs:
        raise ConfigurationError("no CIFAR batch files given")
    return np.concatenate(xs), np.concatenate(ys)


def train_test_split(X, y, test_fraction: float = 0.2, seed: int = 0):
    """Seeded shuffle split returning ``X_train, y_train, X_test, y_test``."""
    from sklearn.model_selection import train_test_split as _split

    X_tr, X_te, y_tr, y_te = _split(X, y, test_size=test_fraction, random_state=seed)
    return X_tr, y_tr, X_te, y_te
