"""MNIST IDX and CIFAR-10 binary readers/writers, a synthetic image
distribution, and deterministic batching.

Images are held as float64 arrays [N, C, H, W].  Loaders produce the
``raw01`` range (byte / 255); :func:`to_signed11` maps to the tanh range used
by the generator.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .autodiff.rng import derive_seed, normal01, uniform01

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class DatasetFormatError(ValueError):
    """Malformed dataset file."""


class BadMagicError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class RecordLengthError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str = "real"
    value_range: str = "raw01"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, C, H, W], got {self.images.shape}")
        if len(self.images) == 0:
            raise ValueError("dataset is empty")
        if len(self.labels) != len(self.images):
            raise DimensionMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise LabelRangeError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.images)):
            raise ValueError("images contain non-finite values")
        if self.provenance not in ("real", "generated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.value_range not in ("raw01", "signed11"):
            raise ValueError(f"unknown value range {self.value_range!r}")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "LabeledDataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])


def to_signed11(x: np.ndarray) -> np.ndarray:
    return 2.0 * x - 1.0


def to_raw01(x: np.ndarray) -> np.ndarray:
    return (x + 1.0) / 2.0


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse_idx(blob: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFileError(f"{what}: header needs {header} bytes, file has {len(blob)}")
    found = struct.unpack(">I", blob[:4])[0]
    if found != magic:
        raise BadMagicError(f"{what}: magic {found:#010x}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header < count:
        raise TruncatedFileError(
            f"{what}: payload needs {count} bytes, file has {len(blob) - header}")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, value_range: str = "raw01") -> LabeledDataset:
    images = _parse_idx(_read(images_path), IDX_IMAGES_MAGIC, 3, "IDX images")
    labels = _parse_idx(_read(labels_path), IDX_LABELS_MAGIC, 1, "IDX labels")
    if len(images) != len(labels):
        raise DimensionMismatchError(
            f"IDX image count {len(images)} does not match label count {len(labels)}")
    if labels.size and labels.max() > 9:
        raise LabelRangeError(f"IDX label {int(labels.max())} outside [0, 10)")
    x = images[:, None].astype(np.float64) / 255.0
    if value_range == "signed11":
        x = to_signed11(x)
    return LabeledDataset(x, labels.astype(np.int64), 10, value_range=value_range)


def _to_bytes(images: np.ndarray, value_range: str) -> np.ndarray:
    x = to_raw01(images) if value_range == "signed11" else images
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def write_mnist_idx(ds: LabeledDataset, images_path, labels_path) -> None:
    if ds.images.shape[1] != 1:
        raise ValueError("IDX writer expects single-channel images")
    n, _, h, w = ds.images.shape
    pixels = _to_bytes(ds.images, ds.value_range)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def load_cifar10_binary(batch_paths: Sequence | str | os.PathLike,
                        value_range: str = "raw01") -> LabeledDataset:
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    records = []
    for path in batch_paths:
        blob = _read(path)
        if len(blob) == 0 or len(blob) % CIFAR_RECORD:
            raise RecordLengthError(
                f"{path}: length {len(blob)} is not a positive multiple of {CIFAR_RECORD}")
        records.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    data = np.concatenate(records)
    labels = data[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise LabelRangeError(f"CIFAR-10 label byte {int(labels.max())} > 9")
    x = data[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    if value_range == "signed11":
        x = to_signed11(x)
    return LabeledDataset(x, labels, 10, value_range=value_range)


def write_cifar10_binary(ds: LabeledDataset, path) -> None:
    if ds.images.shape[1:] != (3, 32, 32):
        raise ValueError("CIFAR-10 writer expects [N, 3, 32, 32] images")
    pixels = _to_bytes(ds.images, ds.value_range).reshape(len(ds), -1)
    out = np.concatenate([ds.labels.astype(np.uint8)[:, None], pixels], axis=1)
    with open(path, "wb") as fh:
        fh.write(out.tobytes())


# -- synthetic ------------------------------------------------------------------

def default_templates(n_modes: int, shape=(1, 8, 8)) -> np.ndarray:
    """Bar patterns: even modes light a vertical band, odd modes a horizontal one."""
    c, h, w = shape
    out = np.zeros((n_modes, c, h, w))
    for m in range(n_modes):
        band = m // 2
        if m % 2 == 0:
            start = (2 * band + 1) % max(w - 1, 1)
            out[m, :, :, start:start + 2] = 1.0
        else:
            start = (2 * band + 1) % max(h - 1, 1)
            out[m, :, start:start + 2, :] = 1.0
    return out


@dataclass
class SyntheticSpec:
    image_shape: tuple = (1, 8, 8)
    n_modes: int = 2
    noise_std: float = 0.05
    samples_per_mode: int = 500
    templates: np.ndarray | None = field(default=None, repr=False)

    def resolved_templates(self) -> np.ndarray:
        if self.templates is not None:
            return np.asarray(self.templates, dtype=np.float64)
        return default_templates(self.n_modes, tuple(self.image_shape))

    def validate(self) -> np.ndarray:
        if self.n_modes < 2:
            raise ValueError("synthetic data needs at least two modes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.samples_per_mode < 1:
            raise ValueError("samples_per_mode must be positive")
        t = self.resolved_templates()
        if t.shape != (self.n_modes, *self.image_shape):
            raise ValueError(f"templates must have shape {(self.n_modes, *self.image_shape)}")
        flat = t.reshape(self.n_modes, -1)
        dist = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
        closest = dist[~np.eye(self.n_modes, dtype=bool)].min()
        if not closest > 4 * self.noise_std:
            raise ValueError(f"templates too close: min distance {closest:.4g} "
                             f"<= 4 x noise std {self.noise_std}")
        return t


def make_synthetic(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> LabeledDataset:
    """Noisy copies of per-mode templates, clipped to [0, 1]; label = mode index."""
    templates = spec.validate()
    n = spec.n_modes * spec.samples_per_mode
    labels = np.repeat(np.arange(spec.n_modes), spec.samples_per_mode)
    pixels = int(np.prod(spec.image_shape))
    noise = normal01(n * pixels, derive_seed(seed, "synthetic-noise")).reshape(n, *spec.image_shape)
    images = np.clip(templates[labels] + spec.noise_std * noise, 0.0, 1.0)
    order = np.argsort(uniform01(n, derive_seed(seed, "synthetic-order")), kind="stable")
    return LabeledDataset(images[order], labels[order], spec.n_modes)


def nearest_template(images: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Index of the closest template (Euclidean) for each image."""
    flat = images.reshape(len(images), -1)
    t = templates.reshape(len(templates), -1)
    d = ((flat[:, None, :] - t[None]) ** 2).sum(-1)
    return d.argmin(axis=1)


# -- batching -------------------------------------------------------------------

class Batch(NamedTuple):
    indices: np.ndarray
    images: np.ndarray
    labels: np.ndarray


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    keys = uniform01(n, derive_seed(seed, "epoch", epoch))
    return np.argsort(keys, kind="stable")


def batches(ds: LabeledDataset, batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Yield full batches of a (seed, epoch)-determined permutation; the
    trailing partial batch is dropped."""
    n = len(ds)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    perm = epoch_permutation(n, seed, epoch)
    for start in range(0, n - batch_size + 1, batch_size):
        idx = perm[start:start + batch_size]
        yield Batch(idx, ds.images[idx], ds.labels[idx])


def infinite_batches(ds: LabeledDataset, batch_size: int, seed: int) -> Iterator[Batch]:
    epoch = 0
    while True:
        yield from batches(ds, batch_size, seed, epoch)
        epoch += 1
