"""Desk-scale datasets: synthetic blobs, IDX/CSV ingestion, splits, augmentation."""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Samples ``X`` (first axis indexes samples) with integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    split: str = "train"
    provenance: str = ""
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} samples but {len(y)} labels")
        if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def sample_shape(self):
        return self.X.shape[1:]

    def subset(self, idx, split=None):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx], split=split or self.split)


def make_blob_centers(n_classes, dim, class_separation, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n_classes, dim))
    return class_separation * c / np.linalg.norm(c, axis=1, keepdims=True)


def make_blobs(n_classes, n_per_class, dim, class_separation, noise_sigma, seed, sample_seed=None, split="train"):
    """Gaussian class blobs around centers on a sphere of radius ``class_separation``.

    Centers depend only on ``seed``; samples are drawn from ``sample_seed``
    (defaults to ``seed``), so held-out draws around the same centers are a
    different ``sample_seed`` away.
    """
    if min(n_classes, n_per_class, dim) < 1:
        raise ValueError("n_classes, n_per_class and dim must be positive")
    centers = make_blob_centers(n_classes, dim, class_separation, seed)
    rng = np.random.default_rng([seed, 1 if sample_seed is None else 2, sample_seed or 0])
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = centers[y] + noise_sigma * rng.standard_normal((len(y), dim))
    prov = f"blobs(n_classes={n_classes}, n_per_class={n_per_class}, dim={dim}, sep={class_separation}, sigma={noise_sigma}, seed={seed}, sample_seed={sample_seed})"
    return Dataset(X, y, n_classes, split, prov)


def _read_idx(path, expected_magic):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise DataFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    payload = raw[4 + 4 * ndim :]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise DataFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, n_classes=None, split="train"):
    """Load MNIST-style IDX files; pixels become ``(N, 1, H, W)`` in [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    X = images.astype(np.float64)[:, None, :, :] / 255.0
    y = labels.astype(np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if len(y) else 0)
    return Dataset(X, y, k, split, f"idx({images_path}, {labels_path})")


def load_csv(path, n_classes=None, split="train"):
    """Header-free rows ``label, feature...``."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    y = arr[:, 0]
    if not np.all(y == np.round(y)):
        raise DataFormatError(f"{path}: labels must be integers")
    y = y.astype(np.int64)
    k = n_classes if n_classes is not None else int(y.max()) + 1
    return Dataset(arr[:, 1:], y, k, split, f"csv({path})")


def split_train_val(dataset, val_fraction, seed):
    """Stratified seeded split; each class keeps at least one training sample."""
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx, notes = [], [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.y == c)
        if len(members) == 0:
            continue
        members = rng.permutation(members)
        if len(members) == 1:
            msg = f"class {c} has a single sample; kept in train"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
            train_idx.extend(members)
            continue
        n_val = min(int(np.floor(len(members) * val_fraction + 0.5)), len(members) - 1)
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    train = dataset.subset(np.sort(train_idx), "train")
    val = dataset.subset(np.sort(val_idx), "val")
    return replace(train, notes=tuple(notes)), val


@dataclass(frozen=True)
class AugmentPolicy:
    flip_horizontal: bool = False
    max_shift_pixels: int = 0

    @property
    def active(self):
        return self.flip_horizontal or self.max_shift_pixels > 0


def shift_image(img, dy, dx):
    """Translate a ``(C, H, W)`` image with zero fill."""
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[..., dst_y, dst_x] = img[..., src_y, src_x]
    return out


def augment(sample, policy, rng):
    """Random horizontal flip (p=1/2) and integer shift with zero padding."""
    if not policy.active:
        return sample
    if sample.ndim != 3:
        raise ValueError(f"augment expects a (C, H, W) image, got shape {sample.shape}")
    if policy.max_shift_pixels >= min(sample.shape[1:]):
        raise ValueError("max_shift_pixels must be smaller than the image side")
    out = sample
    if policy.flip_horizontal and rng.random() < 0.5:
        out = out[..., ::-1]
    if policy.max_shift_pixels:
        s = policy.max_shift_pixels
        dy, dx = rng.integers(-s, s + 1, size=2)
        out = shift_image(out, int(dy), int(dx))
    return np.ascontiguousarray(out)


def augment_batch(batch, policy, rng):
    if not policy.active:
        return batch
    return np.stack([augment(x, policy, rng) for x in batch])
