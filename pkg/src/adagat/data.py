"""Synthetic benchmarks, IDX ingestion and mini-batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

SYNTHETIC_KINDS = ("two_moons", "gaussian_blobs", "concentric_rings")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        n = len(self.labels)
        if n == 0:
            raise ValueError("dataset is empty")
        if self.inputs.shape[0] != n:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {n} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        self.inputs.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dims(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])


def _balanced_labels(n: int, k: int) -> np.ndarray:
    return np.arange(n) % k


def make_synthetic(kind: str, n: int, num_classes: int = 2, noise: float = 0.1, seed: int = 0,
                   split: str = "train") -> Dataset:
    """Generate a 2-D toy classification problem.

    two_moons: two interleaved unit half-circles, the second shifted by (1, -0.5).
    gaussian_blobs: isotropic Gaussians (std ``noise``) around K means on a circle of radius 3.
    concentric_rings: K rings of radius 1..K with radial Gaussian jitter.
    Class sizes differ by at most one.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unsupported synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if kind == "two_moons" and num_classes != 2:
        raise ValueError("two_moons has exactly 2 classes")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if n < 10 * num_classes:
        raise ValueError(f"need n >= 10*K = {10 * num_classes}, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(_balanced_labels(n, num_classes))

    if kind == "two_moons":
        t = rng.uniform(0.0, np.pi, size=n)
        upper = labels == 0
        x = np.where(upper, np.cos(t), 1.0 - np.cos(t))
        y = np.where(upper, np.sin(t), -np.sin(t) + 0.5)
        # lower moon: lower half of the unit circle centred at (1, 0.5)
        pts = np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))
    elif kind == "gaussian_blobs":
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        means = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        pts = means[labels] + noise * rng.standard_normal((n, 2))
    else:
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        radius = (labels + 1.0) + noise * rng.standard_normal(n)
        pts = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    return Dataset(pts.astype(np.float64), labels.astype(np.int64), num_classes, split)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint seeded split; both halves keep the class count of ``ds``."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(ds)
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise ValueError("split leaves no training samples")
    perm = np.random.default_rng(seed).permutation(n)
    te, tr = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return (
        Dataset(ds.inputs[tr].copy(), ds.labels[tr].copy(), ds.num_classes, "train"),
        Dataset(ds.inputs[te].copy(), ds.labels[te].copy(), ds.num_classes, "test"),
    )


def batches(ds: Dataset, m: int, shuffle_seed: int | None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (inputs, labels) mini-batches covering ``ds`` exactly once.

    ``shuffle_seed=None`` keeps dataset order.  The last batch may be short.
    """
    n = len(ds)
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    if m > n:
        raise ValueError(f"batch size {m} exceeds dataset size {n}")
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, m):
        idx = order[start:start + m]
        yield ds.inputs[idx], ds.labels[idx]


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Shift/scale every feature to zero mean and unit variance using ``train`` statistics."""
    mu = train.inputs.mean(axis=0)
    sd = train.inputs.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return tuple(
        Dataset((d.inputs - mu) / sd, d.labels.copy(), d.num_classes, d.split) for d in (train, *others)
    )


def coordinate_range(ds: Dataset) -> float:
    """Mean per-feature (max - min) spread of the inputs."""
    flat = ds.inputs.reshape(len(ds), -1)
    return float(np.mean(flat.max(axis=0) - flat.min(axis=0)))


# -- IDX ----------------------------------------------------------------------


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_idx(path, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels become float64 in [0, 1], shaped (n, 1, H, W)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    inputs = (images.astype(np.float64) / 255.0)[:, None, :, :]
    k = num_classes if num_classes is not None else max(2, int(labels.max()) + 1)
    return Dataset(inputs, labels, k, split)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"expected (n, rows, cols) images, got shape {images.shape}")
    head = struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape)
    Path(path).write_bytes(head + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    head = struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", labels.shape[0])
    Path(path).write_bytes(head + labels.tobytes())
