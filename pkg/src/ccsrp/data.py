"""Datasets: IDX ingestion, synthetic quadrant blobs and stratified subsampling."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, EmptyDataset, TruncatedFile

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, C, H, W], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _read_idx(path, magic: int) -> tuple[tuple, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: missing header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise TruncatedFile(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:hdr])
    need = int(np.prod(dims))
    body = raw[hdr:]
    if len(body) < need:
        raise TruncatedFile(f"{path}: expected {need} data bytes, found {len(body)}")
    return dims, body[:need]


def load_idx(images_path, labels_path, num_classes: int | None = None, name: str = "idx") -> Dataset:
    """Read an unsigned-byte IDX image/label pair; pixels are scaled by 1/255."""
    (n, h, w), ibody = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (m,), lbody = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if n != m:
        raise CountMismatch(f"{n} images vs {m} labels")
    images = (np.frombuffer(ibody, dtype=np.uint8).reshape(n, 1, h, w) / np.float32(255)).astype(np.float32)
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 1
    return Dataset(images, labels, num_classes, name)


def write_idx(ds: Dataset, images_path, labels_path):
    """Write a single-channel dataset as IDX (pixels rounded to bytes)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise ValueError("IDX export supports single-channel images only")
    pix = np.rint(ds.images[:, 0] * 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pix.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + ds.labels.astype(np.uint8).tobytes())


def class_patterns(num_classes: int, img_size: int, background: float = 0.0,
                   amplitude: float = 1.0) -> np.ndarray:
    """One fixed blob per class on a ceil(sqrt(K)) grid; 4 classes give quadrants."""
    g = math.ceil(math.sqrt(num_classes))
    cell = img_size / g
    yy, xx = np.mgrid[0:img_size, 0:img_size] + 0.5
    sigma = cell / 3.0
    pats = np.empty((num_classes, img_size, img_size), dtype=np.float64)
    for k in range(num_classes):
        cy, cx = (k // g + 0.5) * cell, (k % g + 0.5) * cell
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        pats[k] = background + amplitude * blob
    return pats


def synth_blobs(num_classes: int = 4, per_class: int = 200, img_size: int = 12,
                noise_std: float = 0.1, seed: int = 0, background: float = 0.0,
                amplitude: float = 1.0) -> Dataset:
    """Balanced synthetic set: class blob plus Gaussian pixel noise, clipped to [0, 1]."""
    if min(num_classes, per_class, img_size) < 1 or noise_std < 0:
        raise ValueError("synth_blobs arguments must be positive")
    rng = np.random.default_rng(seed)
    pats = class_patterns(num_classes, img_size, background, amplitude)
    labels = np.repeat(np.arange(num_classes), per_class)
    labels = labels[rng.permutation(len(labels))]
    imgs = pats[labels] + noise_std * rng.standard_normal((len(labels), img_size, img_size))
    imgs = np.clip(imgs, 0.0, 1.0).astype(np.float32)[:, None]
    return Dataset(imgs, labels.astype(np.int64), num_classes, f"blobs{num_classes}")


def sample_subset(ds: Dataset, fraction: float, seed, stratified: bool = True) -> Dataset:
    """Random subset without replacement.

    Stratified: ceil(fraction * count) examples per class. Otherwise
    ceil(fraction * N) uniformly. The result order is shuffled.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if len(ds) == 0:
        raise EmptyDataset("cannot sample from an empty dataset")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if stratified:
        picks = []
        for k in range(ds.num_classes):
            idx = np.flatnonzero(ds.labels == k)
            take = _ceil_frac(fraction, len(idx))
            picks.append(rng.choice(idx, size=take, replace=False) if take else idx[:0])
        chosen = np.concatenate(picks)
    else:
        chosen = rng.choice(len(ds), size=_ceil_frac(fraction, len(ds)), replace=False)
    chosen = chosen[rng.permutation(len(chosen))]
    return ds.subset(chosen, name=f"{ds.name}[{fraction:g}]")


def _ceil_frac(fraction: float, count: int) -> int:
    # guard against 0.1 * 30 = 3.0000000000000004
    return min(count, math.ceil(round(fraction * count, 9)))


def shuffle_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
