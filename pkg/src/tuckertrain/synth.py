"""Synthetic 10-class image corpora in the exact on-disk dataset formats.

Real CIFAR-10 is a download away in most environments but not all, so
this module fabricates a stand-in corpus and writes it in the CIFAR-10
binary (or MNIST IDX) layout.  The loaders, training loop, and every
format check run unchanged; dropping the real files into the data
directory swaps the corpus without touching code.

Each class is a small set of smooth color-field prototypes.  A sample
blends two prototypes of its class, jitters contrast and brightness,
adds pixel noise, shifts by a few pixels, and flips half the time.  The
blend structure keeps the task learnable but non-trivial, and because
class identity is flip-invariant by construction, the training-time flip
augmentation is label preserving.
"""

from __future__ import annotations

import os
import struct

import numpy as np

PROTOTYPES_PER_CLASS = 4
NOISE_SIGMA = 0.16
MAX_SHIFT = 3


def _smooth_field(rng: np.random.Generator, channels: int, hw: int) -> np.ndarray:
    """Low-frequency random field in [0, 1]: coarse noise upsampled and
    box-blurred twice."""
    coarse = rng.uniform(0.0, 1.0, size=(channels, hw // 4, hw // 4))
    field = np.kron(coarse, np.ones((4, 4)))
    for _ in range(2):
        padded = np.pad(field, ((0, 0), (1, 1), (1, 1)), mode="edge")
        field = (
            padded[:, :-2, 1:-1] + padded[:, 2:, 1:-1] + padded[:, 1:-1, :-2]
            + padded[:, 1:-1, 2:] + padded[:, 1:-1, 1:-1]
        ) / 5.0
    return field


def _make_prototypes(rng: np.random.Generator, channels: int, hw: int) -> np.ndarray:
    protos = np.empty((10, PROTOTYPES_PER_CLASS, channels, hw, hw))
    for c in range(10):
        tint = rng.uniform(-0.25, 0.25, size=(channels, 1, 1))
        for p in range(PROTOTYPES_PER_CLASS):
            protos[c, p] = np.clip(_smooth_field(rng, channels, hw) + tint, 0.0, 1.0)
    return protos


def _render_sample(protos: np.ndarray, label: int, rng: np.random.Generator) -> np.ndarray:
    a, b = rng.integers(0, PROTOTYPES_PER_CLASS, size=2)
    t = rng.uniform(0.25, 0.75)
    img = t * protos[label, a] + (1.0 - t) * protos[label, b]
    contrast = rng.uniform(0.75, 1.25)
    brightness = rng.uniform(-0.12, 0.12)
    img = (img - 0.5) * contrast + 0.5 + brightness
    img = img + rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    dy, dx = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2)
    img = np.roll(np.roll(img, dy, axis=1), dx, axis=2)
    if rng.random() < 0.5:
        img = img[:, :, ::-1]
    return (np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _render_split(protos, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.arange(n) % 10  # interleaved, exactly balanced
    images = np.empty((n,) + protos.shape[2:], dtype=np.uint8)
    for i in range(n):
        images[i] = _render_sample(protos, int(labels[i]), rng)
    return images, labels.astype(np.uint8)


def write_cifar10_corpus(data_dir: str, n_train: int = 10_000, n_test: int = 2_000,
                         seed: int = 0) -> None:
    """Emit data_batch_1..5.bin and test_batch.bin in CIFAR-10 binary
    layout (label byte + R, G, B planes per record)."""
    os.makedirs(data_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    protos = _make_prototypes(rng, channels=3, hw=32)
    train_x, train_y = _render_split(protos, n_train, rng)
    test_x, test_y = _render_split(protos, n_test, rng)
    per_file = -(-n_train // 5)  # ceil; last file may be short
    for i in range(5):
        lo, hi = i * per_file, min((i + 1) * per_file, n_train)
        _write_cifar_file(os.path.join(data_dir, f"data_batch_{i + 1}.bin"),
                          train_x[lo:hi], train_y[lo:hi])
    _write_cifar_file(os.path.join(data_dir, "test_batch.bin"), test_x, test_y)


def _write_cifar_file(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    n = images.shape[0]
    rec = np.empty((n, 3073), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images.reshape(n, -1)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


def write_mnist_corpus(data_dir: str, n_train: int = 10_000, n_test: int = 2_000,
                       seed: int = 0) -> None:
    """Emit train/test IDX pairs (big-endian magics 0x803 / 0x801)."""
    os.makedirs(data_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    protos = _make_prototypes(rng, channels=1, hw=28)
    for split, n in (("train", n_train), ("t10k", n_test)):
        images, labels = _render_split(protos, n, rng)
        with open(os.path.join(data_dir, f"{split}-images-idx3-ubyte"), "wb") as f:
            f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
            f.write(images.tobytes())
        with open(os.path.join(data_dir, f"{split}-labels-idx1-ubyte"), "wb") as f:
            f.write(struct.pack(">II", 0x00000801, n))
            f.write(labels.tobytes())
