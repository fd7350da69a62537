"""Dataset ingestion: the canonical big-endian IDX image/label format
(MNIST layout), plus a seeded synthetic digit corpus for environments
where the real MNIST files are not available.

The synthetic corpus starts from scikit-learn's bundled 8x8 handwritten
digits, upsamples them to 1x28x28 and expands each split with small
random shifts. It is written out as the same four IDX files, so every
pipeline stage exercises the identical ingestion path.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float64 in [0, 1]
    labels: np.ndarray  # [N] int64

    def __len__(self) -> int:
        return len(self.images)


def _read_exact(f, n: int, path, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise ParseError(f"{path}: truncated {what}", offset)
    return data


def read_idx_images(path) -> np.ndarray:
    """Read an IDX3 image file into a uint8 array [N, H, W]."""
    with open(path, "rb") as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, path, "magic"))
        if magic != IMAGE_MAGIC:
            raise ParseError(f"{path}: bad magic 0x{magic:08x}, expected image magic "
                             f"0x{IMAGE_MAGIC:08x}", 0)
        count, rows, cols = struct.unpack(">iii", _read_exact(f, 12, path, "dimensions"))
        if count < 0 or rows <= 0 or cols <= 0:
            raise ParseError(f"{path}: implausible dimensions {count}x{rows}x{cols}", 4)
        data = _read_exact(f, count * rows * cols, path, "pixel payload")
        if f.read(1):
            raise ParseError(f"{path}: trailing bytes after pixel payload", f.tell() - 1)
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX1 label file into a uint8 array [N]."""
    with open(path, "rb") as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, path, "magic"))
        if magic != LABEL_MAGIC:
            raise ParseError(f"{path}: bad magic 0x{magic:08x}, expected label magic "
                             f"0x{LABEL_MAGIC:08x}", 0)
        (count,) = struct.unpack(">i", _read_exact(f, 4, path, "count"))
        if count < 0:
            raise ParseError(f"{path}: negative item count {count}", 4)
        data = _read_exact(f, count, path, "label payload")
        if f.read(1):
            raise ParseError(f"{path}: trailing bytes after label payload", f.tell() - 1)
    return np.frombuffer(data, dtype=np.uint8).copy()


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _load_pair(image_path, label_path) -> Dataset:
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(images) != len(labels):
        raise IntegrityError(f"{image_path} has {len(images)} images but {label_path} "
                             f"has {len(labels)} labels")
    return Dataset(images[:, None].astype(np.float64) / 255.0,
                   labels.astype(np.int64))


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Load the four standard IDX files from ``directory``; pixel values
    are scaled to [0, 1]. Returns (train, test)."""
    train = _load_pair(os.path.join(directory, TRAIN_IMAGES),
                       os.path.join(directory, TRAIN_LABELS))
    test = _load_pair(os.path.join(directory, TEST_IMAGES),
                      os.path.join(directory, TEST_LABELS))
    return train, test


# -- synthetic stand-in corpus --------------------------------------------

def _upsample28(img8: np.ndarray) -> np.ndarray:
    """8x8 -> 28x28 by bilinear interpolation, scaled to [0, 255]."""
    src = np.asarray(img8, dtype=np.float64) / 16.0  # load_digits range is 0..16
    xs = np.linspace(0, 7, 28)
    i0 = np.clip(np.floor(xs).astype(int), 0, 6)
    frac = xs - i0
    rows = src[i0] * (1 - frac)[:, None] + src[i0 + 1] * frac[:, None]
    out = rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    return np.clip(np.round(out * 255), 0, 255).astype(np.uint8)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    out[ys, xs] = img[max(-dy, 0) : h - max(dy, 0), max(-dx, 0) : w - max(dx, 0)]
    return out


def build_synthetic_digits(directory, train_per_class: int = 900,
                           test_per_class: int = 200, seed: int = 0,
                           train_shift: int = 2, test_shift: int = 1) -> None:
    """Write a four-file IDX digit corpus under ``directory``.

    Base 8x8 digits are split into disjoint train/test pools per class
    before augmentation, so no test image shares a source image with the
    training set. Training shifts cover the (smaller) test shifts so the
    test distribution stays inside the training one. Deterministic for a
    given seed.
    """
    from sklearn.datasets import load_digits

    rng = np.random.default_rng(seed)
    digits = load_digits()
    os.makedirs(directory, exist_ok=True)
    train_imgs, train_labels, test_imgs, test_labels = [], [], [], []
    for c in range(10):
        base = digits.images[digits.target == c]
        order = rng.permutation(len(base))
        n_test_base = max(1, len(base) // 4)
        test_base = [_upsample28(base[i]) for i in order[:n_test_base]]
        train_base = [_upsample28(base[i]) for i in order[n_test_base:]]
        for pool, imgs, labels, want, max_shift in (
                (train_base, train_imgs, train_labels, train_per_class, train_shift),
                (test_base, test_imgs, test_labels, test_per_class, test_shift)):
            for j in range(want):
                img = pool[j % len(pool)]
                if j >= len(pool):  # augmented copy
                    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
                    img = _shift(img, int(dy), int(dx))
                imgs.append(img)
                labels.append(c)
    train_order = rng.permutation(len(train_imgs))
    test_order = rng.permutation(len(test_imgs))
    write_idx_images(os.path.join(directory, TRAIN_IMAGES),
                     np.stack(train_imgs)[train_order])
    write_idx_labels(os.path.join(directory, TRAIN_LABELS),
                     np.array(train_labels)[train_order])
    write_idx_images(os.path.join(directory, TEST_IMAGES),
                     np.stack(test_imgs)[test_order])
    write_idx_labels(os.path.join(directory, TEST_LABELS),
                     np.array(test_labels)[test_order])
