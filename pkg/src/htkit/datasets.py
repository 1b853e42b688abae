"""Dataset loading and bundled synthetic stand-ins.

Real data comes from IDX image/label pairs (the raster format used for
handwritten-digit archives) or plain CSV feature files. When no files are
available, deterministic synthetic sets with the same shapes are
generated so every experiment stays runnable offline.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "load_idx",
    "load_idx_pair",
    "load_csv_features",
    "pad_images",
    "synthetic_digits",
    "mnist_like",
    "toy_image_set",
    "toy_two_class",
]

_IDX_DTYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_idx(path) -> np.ndarray:
    """Parse an IDX file: big-endian magic, u32 dims, raw payload."""
    buf = _read_bytes(path)
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0:
        raise ConfigError(f"{path} is not an IDX file")
    dtype_code, ndim = buf[2], buf[3]
    if dtype_code not in _IDX_DTYPES:
        raise ConfigError(f"{path}: unknown IDX dtype 0x{dtype_code:02x}")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    data = np.frombuffer(buf, dtype=_IDX_DTYPES[dtype_code], offset=4 + 4 * ndim)
    return data.reshape(dims)


def load_idx_pair(images_path, labels_path, limit=None):
    """Images scaled to [0, 1] plus integer labels."""
    images = load_idx(images_path).astype(np.float64) / 255.0
    labels = load_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise ConfigError(
            f"{images_path} has {len(images)} images but {labels_path} has "
            f"{len(labels)} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels


def load_csv_features(path):
    """Plain CSV: first column integer label, remaining columns features."""
    raw = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    labels = raw[:, 0].astype(np.int64)
    return raw[:, 1:], labels


def pad_images(images: np.ndarray, target: int = 32) -> np.ndarray:
    """Center images on a target x target zero canvas."""
    n, h, w = images.shape
    if h > target or w > target:
        raise ConfigError(f"cannot pad {h}x{w} images to {target}x{target}")
    top = (target - h) // 2
    left = (target - w) // 2
    out = np.zeros((n, target, target))
    out[:, top:top + h, left:left + w] = images
    return out


_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00010 00100 01000 11111",
    "11111 00010 00100 00010 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_bitmap(cls: int) -> np.ndarray:
    rows = _GLYPHS[cls].split()
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64)


def synthetic_digits(n: int = 4000, seed: int = 0, size: int = 28):
    """Deterministic digit-like raster set: glyphs with jitter and noise."""
    rng = np.random.default_rng(seed)
    scale = 3
    glyphs = [np.kron(_glyph_bitmap(c), np.ones((scale, scale))) for c in range(10)]
    gh, gw = glyphs[0].shape
    images = np.zeros((n, size, size))
    labels = rng.integers(0, 10, size=n)
    max_dy = size - gh
    max_dx = size - gw
    for i in range(n):
        g = glyphs[labels[i]]
        dy = rng.integers(0, max_dy + 1)
        dx = rng.integers(0, max_dx + 1)
        intensity = 0.7 + 0.3 * rng.random()
        images[i, dy:dy + gh, dx:dx + gw] = g * intensity
    images += 0.18 * rng.standard_normal(images.shape)
    return np.clip(images, 0.0, 1.0), labels.astype(np.int64)


def mnist_like(n: int = 4000, data_dir=None, seed: int = 0):
    """Real IDX digit data when present under ``data_dir``, otherwise the
    bundled synthetic stand-in; images are padded to 32 x 32 either way."""
    if data_dir is not None:
        base = Path(data_dir)
        for img_name, lab_name in (
            ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
        ):
            img_path, lab_path = base / img_name, base / lab_name
            if img_path.exists() and lab_path.exists():
                images, labels = load_idx_pair(img_path, lab_path, limit=n)
                return pad_images(images), labels
    images, labels = synthetic_digits(n, seed)
    return pad_images(images), labels


def toy_image_set(n: int = 600, seed: int = 0, size: int = 8, channels: int = 4,
                  classes: int = 10):
    """Ten-class image set: fixed random prototypes plus per-sample noise."""
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.0, 1.0, size=(classes, size, size, channels))
    labels = rng.integers(0, classes, size=n)
    images = prototypes[labels] + 0.25 * rng.standard_normal(
        (n, size, size, channels)
    )
    return images, labels.astype(np.int64)


def toy_two_class(n: int = 64, features: int = 16, seed: int = 0):
    """Linearly separable two-class set (labels from a fixed hyperplane)."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(features)
    x = rng.standard_normal((n, features))
    margin = x @ w
    # push points away from the decision boundary to guarantee a margin
    x += 0.5 * np.sign(margin)[:, None] * w[None, :] / np.linalg.norm(w)
    y = ((x @ w) > 0).astype(np.int64)
    return x, y


def train_val_split(x, y, val_fraction: float = 0.2, seed: int = 0):
    n = len(x)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(n * val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    return x[train_idx], y[train_idx], x[val_idx], y[val_idx]
