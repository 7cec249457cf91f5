"""Dataset ingestion (CIFAR-10 binary, MNIST IDX), augmentation, metrics CSV.

Loaders are bit-exact over the published binary formats and fully
deterministic: the same directory always yields the same tensors, and
subsetting takes a stratified prefix (the first k records of each class
in file order) so small subsets stay class balanced.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465], dtype=np.float32)
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616], dtype=np.float32)
MNIST_MEAN = np.array([0.1307], dtype=np.float32)
MNIST_STD = np.array([0.3081], dtype=np.float32)
IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

PHASES = ("original", "decomposed", "reconstructed")
METRICS_HEADER = "epoch,wall_time_s,train_loss,test_acc,param_count,flops_est,lr,phase"


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32, normalized
    labels: np.ndarray  # (N,) int64 in 0..9
    split: str

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    @property
    def n(self) -> int:
        return int(self.images.shape[0])


def _normalize(pixels: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    x = pixels.astype(np.float32) / 255.0
    return (x - mean[None, :, None, None]) / std[None, :, None, None]


def _stratified_prefix(labels: np.ndarray, subset: int, num_classes: int = 10) -> np.ndarray:
    quota = [subset // num_classes + (1 if c < subset % num_classes else 0) for c in range(num_classes)]
    counts = [0] * num_classes
    keep = []
    for i, y in enumerate(labels):
        if counts[y] < quota[y]:
            counts[y] += 1
            keep.append(i)
            if len(keep) == subset:
                break
    if len(keep) < subset:
        raise FormatError(
            f"stratified subset of {subset} needs {max(quota)} per class; corpus is short"
        )
    return np.asarray(keep, dtype=np.intp)


def load_cifar10(data_dir: str, subset: int | None = None, split: str = "train") -> Dataset:
    """CIFAR-10 binary version: each record is one label byte followed by
    3072 pixel bytes (R, G, B planes, row-major 32x32)."""
    if split not in ("train", "test"):
        raise FormatError(f"unknown split {split!r}")
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    records = []
    for name in names:
        path = os.path.join(data_dir, name)
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise FormatError(f"cannot read {path}: {e}") from e
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES))
    rec = np.concatenate(records, axis=0)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"corrupt record {bad}: label {labels[bad]} > 9")
    if subset is not None:
        keep = _stratified_prefix(labels, subset)
        rec = rec[keep]
        labels = labels[keep]
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32)
    return Dataset(images=_normalize(pixels, CIFAR_MEAN, CIFAR_STD), labels=labels, split=split)


def _read_be_u32(f, path) -> int:
    buf = f.read(4)
    if len(buf) != 4:
        raise FormatError(f"{path}: truncated header")
    return struct.unpack(">I", buf)[0]


def load_mnist_idx(image_path: str, label_path: str, subset: int | None = None,
                   split: str = "train") -> Dataset:
    """MNIST IDX pair: big-endian magics 0x803 (images) / 0x801 (labels)."""
    try:
        with open(image_path, "rb") as f:
            magic = _read_be_u32(f, image_path)
            if magic != IDX_IMAGE_MAGIC:
                raise FormatError(f"{image_path}: bad magic {magic:#010x}")
            n, rows, cols = (_read_be_u32(f, image_path) for _ in range(3))
            buf = f.read(n * rows * cols)
            if len(buf) != n * rows * cols:
                raise FormatError(f"{image_path}: truncated pixel data")
            pixels = np.frombuffer(buf, dtype=np.uint8).reshape(n, 1, rows, cols)
        with open(label_path, "rb") as f:
            magic = _read_be_u32(f, label_path)
            if magic != IDX_LABEL_MAGIC:
                raise FormatError(f"{label_path}: bad magic {magic:#010x}")
            n_labels = _read_be_u32(f, label_path)
            buf = f.read(n_labels)
            if len(buf) != n_labels:
                raise FormatError(f"{label_path}: truncated label data")
            labels = np.frombuffer(buf, dtype=np.uint8).astype(np.int64)
    except OSError as e:
        raise FormatError(f"cannot read MNIST files: {e}") from e
    if n != n_labels:
        raise FormatError(f"consistency: {n} images but {n_labels} labels")
    if labels.max(initial=0) > 9:
        raise FormatError("corrupt record: label > 9")
    if subset is not None:
        keep = _stratified_prefix(labels, subset)
        pixels = pixels[keep]
        labels = labels[keep]
    return Dataset(images=_normalize(pixels, MNIST_MEAN, MNIST_STD), labels=labels, split=split)


AUGMENT_PAD = 4


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad 4 per side, random crop back to the input size, horizontal
    flip with probability 0.5.  Training split only; consumes exactly
    three rng draws so replay stays deterministic."""
    c, h, w = image.shape
    padded = np.zeros((c, h + 2 * AUGMENT_PAD, w + 2 * AUGMENT_PAD), dtype=image.dtype)
    padded[:, AUGMENT_PAD : AUGMENT_PAD + h, AUGMENT_PAD : AUGMENT_PAD + w] = image
    dy = int(rng.integers(0, 2 * AUGMENT_PAD + 1))
    dx = int(rng.integers(0, 2 * AUGMENT_PAD + 1))
    out = padded[:, dy : dy + h, dx : dx + w]
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


@dataclass
class MetricsRow:
    epoch: int
    wall_time_s: float
    train_loss: float
    test_acc: float
    param_count: int
    flops_est: int
    lr: float
    phase: str


def append_metrics(path: str, row: MetricsRow) -> None:
    """Append one CSV row, writing the header first on an empty file.
    The file is opened and closed per call so every epoch hits disk."""
    if row.phase not in PHASES:
        raise FormatError(f"phase {row.phase!r} not in {PHASES}")
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    line = (
        f"{row.epoch},{row.wall_time_s:.3f},{row.train_loss:.6f},{row.test_acc:.6f},"
        f"{row.param_count},{row.flops_est},{row.lr:g},{row.phase}\n"
    )
    with open(path, "a", encoding="ascii") as f:
        if fresh:
            f.write(METRICS_HEADER + "\n")
        f.write(line)


def read_metrics(path: str) -> list[MetricsRow]:
    rows = []
    with open(path, encoding="ascii") as f:
        header = f.readline().strip()
        if header != METRICS_HEADER:
            raise FormatError(f"{path}: unexpected header {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise FormatError(f"{path}: malformed row {line!r}")
            rows.append(
                MetricsRow(
                    epoch=int(parts[0]),
                    wall_time_s=float(parts[1]),
                    train_loss=float(parts[2]),
                    test_acc=float(parts[3]),
                    param_count=int(parts[4]),
                    flops_est=int(parts[5]),
                    lr=float(parts[6]),
                    phase=parts[7],
                )
            )
    return rows
