"""Binary-classification datasets: CIFAR-10 ingestion, synthetic blobs,
Gaussian augmentation, stratified batching and a flat cache container.

Features are kept as float64 arrays in [0, 1]; labels are int8 in {-1, +1}.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CACHE_MAGIC = b"M01D"
CACHE_VERSION = 1


class DataError(Exception):
    """Raised for malformed or unusable input data."""


class ConfigError(ValueError):
    """Raised for out-of-range configuration values."""


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_map: dict = field(default_factory=lambda: {"-1": None, "+1": None})

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int8)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if y.size and not np.all((y == 1) | (y == -1)):
            raise DataError("labels must be +1 or -1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], dict(self.class_map))

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")


def read_cifar10_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Return raw (labels uint8[n], pixels uint8[n, 3072]) from one binary batch file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    raw = np.fromfile(path, dtype=np.uint8)
    n_full, rem = divmod(raw.size, CIFAR_RECORD)
    if rem:
        raise DataError(
            f"{path}: short record at byte offset {n_full * CIFAR_RECORD} "
            f"({rem} of {CIFAR_RECORD} bytes)"
        )
    records = raw.reshape(n_full, CIFAR_RECORD)
    labels = records[:, 0].copy()
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataError(f"{path}: invalid label {labels[bad[0]]} at byte offset {bad[0] * CIFAR_RECORD}")
    return labels, records[:, 1:].copy()


def write_cifar10_records(path, labels, pixels) -> None:
    """Write records in the CIFAR-10 binary layout (used for fixtures and round-trips)."""
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(labels.shape[0], CIFAR_PIXELS)
    np.concatenate([labels, pixels], axis=1).tofile(Path(path))


def load_cifar10_pair(paths: Sequence, class_a: int, class_b: int) -> Dataset:
    """Load the two-class subset of CIFAR-10 binary files.

    The smaller class index maps to -1 and the larger to +1. Pixels keep the
    record order (1024 R, 1024 G, 1024 B) and are divided by 255.
    """
    if class_a == class_b:
        raise ConfigError("class_a and class_b must differ")
    for c in (class_a, class_b):
        if not 0 <= c <= 9:
            raise ConfigError(f"class index {c} outside 0-9")
    neg, pos = sorted((class_a, class_b))
    feats, labs = [], []
    for p in paths:
        labels, pixels = read_cifar10_records(p)
        keep = (labels == neg) | (labels == pos)
        feats.append(pixels[keep])
        labs.append(np.where(labels[keep] == pos, 1, -1).astype(np.int8))
    if not feats:
        raise DataError("no input files given")
    X = np.concatenate(feats).astype(np.float64) / 255.0
    y = np.concatenate(labs)
    for c, lab in ((neg, -1), (pos, 1)):
        if not np.any(y == lab):
            raise DataError(f"no records found for class {c}")
    return Dataset(X, y, {"-1": neg, "+1": pos})


def cifar10_files(root, split: str) -> list[Path]:
    """Locate the binary batch files for 'train' or 'test' under `root`."""
    root = Path(root)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    files = [root / n for n in names]
    missing = [str(f) for f in files if not f.is_file()]
    if missing:
        raise DataError(f"missing CIFAR-10 files: {', '.join(missing)}")
    return files


def gaussian_augment(data: Dataset, cfg: NoiseConfig) -> Dataset:
    """Add i.i.d. N(0, sigma) noise to every feature, then clip to [0, 1].

    Draws come from one generator stream consumed in row-major order.
    """
    if cfg.sigma == 0:
        return Dataset(data.features.copy(), data.labels.copy(), dict(data.class_map))
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(data.features.shape) * cfg.sigma
    X = np.clip(data.features + noise, 0.0, 1.0)
    return Dataset(X, data.labels.copy(), dict(data.class_map))


def noise_augmented_training_set(data: Dataset, cfg: NoiseConfig, mode: str = "replace") -> Dataset:
    """Noisy copy of the training set; `mode='append'` keeps the clean points too."""
    noisy = gaussian_augment(data, cfg)
    if mode == "replace":
        return noisy
    if mode == "append":
        return Dataset(
            np.concatenate([data.features, noisy.features]),
            np.concatenate([data.labels, noisy.labels]),
            dict(data.class_map),
        )
    raise ConfigError(f"unknown noise mode {mode!r}")


def stratified_batch(data: Dataset, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sample ceil(fraction * n_c) indices without replacement from each class."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"batch fraction must be in (0, 1], got {fraction}")
    parts = []
    for lab in (-1, 1):
        idx = data.class_indices(lab)
        if idx.size == 0:
            raise DataError(f"class {lab} absent from data")
        m = math.ceil(fraction * idx.size)
        parts.append(rng.choice(idx, size=m, replace=False))
    return np.concatenate(parts)


def synth_blobs(n_per_class: int, d: int, separation: float, rng) -> Dataset:
    """Two unit-variance isotropic Gaussian clusters whose means are `separation` apart.

    Cluster centres sit at +-separation/2 along the first axis. Features are
    not confined to [0, 1]; use for optimizer tests, not image pipelines.
    """
    if n_per_class < 1 or d < 1:
        raise ConfigError("n_per_class and d must be >= 1")
    rng = np.random.default_rng(rng)
    mu = np.zeros(d)
    mu[0] = separation / 2.0
    neg = rng.standard_normal((n_per_class, d)) - mu
    pos = rng.standard_normal((n_per_class, d)) + mu
    X = np.concatenate([neg, pos])
    y = np.concatenate([-np.ones(n_per_class), np.ones(n_per_class)]).astype(np.int8)
    return Dataset(X, y, {"-1": "blob-", "+1": "blob+"})


def synth_images(n_per_class: int, d: int, rng, contrast: float = 0.1, rank: int = 8,
                 spread: float = 0.15, pixel_noise: float = 0.05) -> Dataset:
    """Image-like two-class data in [0, 1]^d for desk runs without CIFAR files.

    Both classes share a random mid-grey base image and a rank-`rank` basis of
    within-class variation; the class means differ by +-contrast/2 along a
    random +-1 pattern. Pixel noise is added last and everything is clipped.
    """
    if n_per_class < 1 or d < 1:
        raise ConfigError("n_per_class and d must be >= 1")
    rng = np.random.default_rng(rng)
    base = rng.uniform(0.3, 0.7, size=d)
    pattern = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    basis = rng.standard_normal((rank, d)) / np.sqrt(rank)
    y = np.concatenate([-np.ones(n_per_class), np.ones(n_per_class)])
    latent = rng.standard_normal((2 * n_per_class, rank))
    X = base + 0.5 * contrast * y[:, None] * pattern + spread * latent @ basis
    X += pixel_noise * rng.standard_normal(X.shape)
    return Dataset(np.clip(X, 0.0, 1.0), y.astype(np.int8), {"-1": "synth-", "+1": "synth+"})


def split_per_class(data: Dataset, n_per_class: int | None, rng) -> Dataset:
    """Random subset with at most `n_per_class` points of each label (order: -1 then +1)."""
    if n_per_class is None:
        return data
    rng = np.random.default_rng(rng)
    parts = []
    for lab in (-1, 1):
        idx = data.class_indices(lab)
        take = min(n_per_class, idx.size)
        parts.append(np.sort(rng.choice(idx, size=take, replace=False)))
    return data.subset(np.concatenate(parts))


# Cache container: magic, u16 version, u64 n, u64 d, int8 labels, float32 LE features.
_HEADER = struct.Struct("<4sHQQ")


def save_dataset(data: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, data.n, data.d))
        fh.write(data.labels.astype(np.int8).tobytes())
        fh.write(data.features.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    """Read a cached dataset; features come back float32-rounded."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + n + 4 * n * d
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    off = _HEADER.size
    y = np.frombuffer(blob, dtype=np.int8, count=n, offset=off)
    X = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off + n).reshape(n, d)
    return Dataset(X.astype(np.float64), y.copy())
