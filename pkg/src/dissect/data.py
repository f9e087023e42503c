"""Datasets: the 3x3 toy task, IDX (MNIST-format) files and splitting."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledData:
    """Inputs ``x``, integer labels ``y`` and stable integer ``ids``."""

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not len(self.x) == len(self.y) == len(self.ids):
            raise ValueError("x, y and ids must have the same length")

    def __len__(self):
        return len(self.y)

    def subset(self, index):
        return LabeledData(self.x[index], self.y[index], self.ids[index])


# --------------------------------------------------------------------------
# Toy dataset
# --------------------------------------------------------------------------


@dataclass
class ToySpec:
    """Binary task on ``side x side`` images with Gaussian pixel noise.

    Class 0 is a plus sign (centre row and column at ``high``), class 1 the
    four corners at ``high``; every other pixel sits at ``low``.
    """

    side: int = 3
    high: float = 0.6
    low: float = 0.4
    std: float = 0.05
    samples_per_class: int = 500

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")
        if self.side < 3 or self.side % 2 == 0:
            raise ValueError("side must be an odd number >= 3")
        if self.high == self.low:
            raise ValueError("class means must differ")

    def means(self):
        s, c = self.side, self.side // 2
        plus = np.full((s, s), self.low)
        plus[c, :] = self.high
        plus[:, c] = self.high
        corners = np.full((s, s), self.low)
        corners[[0, 0, -1, -1], [0, -1, 0, -1]] = self.high
        return np.stack([plus, corners])


def gen_toy(spec: ToySpec = ToySpec(), seed: int = 0) -> LabeledData:
    """Balanced, shuffled toy dataset; inputs have shape ``(1, side, side)``."""
    rng = np.random.default_rng(seed)
    means = spec.means()
    n = spec.samples_per_class
    y = np.repeat(np.arange(2), n)
    x = means[y] + rng.normal(0.0, spec.std, size=(2 * n, spec.side, spec.side))
    order = rng.permutation(2 * n)
    return LabeledData(x[order][:, None], y[order], np.arange(2 * n))


# --------------------------------------------------------------------------
# IDX files
# --------------------------------------------------------------------------


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx_images(data: bytes) -> np.ndarray:
    if len(data) < 16:
        raise ParseError("image file shorter than its 16-byte header", len(data))
    magic, n, rows, cols = struct.unpack_from(">IIII", data, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise ParseError(f"bad image magic 0x{magic:08x}", 0)
    need = 16 + n * rows * cols
    if len(data) < need:
        raise ParseError(f"image payload truncated: need {need} bytes, have {len(data)}", len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=n * rows * cols, offset=16)
    return pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0


def parse_idx_labels(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise ParseError("label file shorter than its 8-byte header", len(data))
    magic, n = struct.unpack_from(">II", data, 0)
    if magic != IDX_LABELS_MAGIC:
        raise ParseError(f"bad label magic 0x{magic:08x}", 0)
    if len(data) < 8 + n:
        raise ParseError(f"label payload truncated: need {8 + n} bytes, have {len(data)}", len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise ValueError(f"label {labels[bad[0]]} at index {bad[0]} outside [0, 9]")
    return labels


def load_idx(images_path, labels_path) -> LabeledData:
    """Load an MNIST-style image/label pair; pixels are scaled to [0, 1]."""
    x = parse_idx_images(_read_bytes(images_path))
    y = parse_idx_labels(_read_bytes(labels_path))
    if len(x) != len(y):
        raise ParseError(f"{len(x)} images but {len(y)} labels", 4)
    return LabeledData(x, y, np.arange(len(y)))


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------


def split(data: LabeledData, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Shuffle and cut into consecutive parts with the given fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(len(data))
    cuts = np.round(np.cumsum(fractions)[:-1] * len(data)).astype(int)
    return [data.subset(part) for part in np.split(order, cuts)]
