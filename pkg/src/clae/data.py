"""Dataset ingestion, synthetic data generation, and augmentation.

Images are float64 arrays of shape (N, C, H, W) with values in [0, 1].
Labels are kept for downstream evaluation only; pretraining never reads
them.  The augmentation pipeline consumes a fixed number of rng draws per
call (see `DRAWS_PER_AUGMENT`) regardless of which transforms fire, so
that reproducibility survives policy changes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataFormatError
from .rng import stream

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 channel-major pixels
LUMA = np.array([0.299, 0.587, 0.114])

#: rng draws consumed by every augment() call: crop dy, crop dx, flip,
#: brightness, contrast, saturation, grayscale.
DRAWS_PER_AUGMENT = 7


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, class_count)
    class_count: int
    name: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.labels) != len(self.images):
            raise ContractError("Dataset: images must be (N,C,H,W) with matching labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ContractError("Dataset: pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractError("Dataset: labels out of range")

    def __len__(self):
        return len(self.images)

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.images.shape[1:]))

    def flattened(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)


@dataclass(frozen=True)
class AugmentPolicy:
    crop_enabled: bool = True
    crop_pad: int = 4
    hflip_enabled: bool = True
    hflip_prob: float = 0.5
    jitter_enabled: bool = True
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_enabled: bool = True
    grayscale_prob: float = 0.1

    def validate(self) -> None:
        for p in (self.hflip_prob, self.grayscale_prob):
            if not 0.0 <= p <= 1.0:
                raise ContractError("augment probabilities must lie in [0, 1]")
        for r in (self.brightness, self.contrast, self.saturation):
            if r < 0:
                raise ContractError("jitter ranges must be non-negative")
        if self.crop_pad < 0:
            raise ContractError("crop_pad must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(crop_enabled=False, hflip_enabled=False,
                   jitter_enabled=False, grayscale_enabled=False)


def load_cifar10(path, max_records: int | None = None) -> Dataset:
    """Load one CIFAR-10 binary file (3073-byte records, RGB planes)."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    if max_records is not None:
        records = records[:max_records]
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{path}: label byte > 9 encountered")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, class_count=10, name="cifar10")


def save_cifar10(dataset: Dataset, path) -> None:
    """Write a dataset back to the CIFAR-10 binary layout (quantized)."""
    n = len(dataset)
    pixels = np.round(dataset.images * 255.0).astype(np.uint8).reshape(n, -1)
    records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.labels.astype(np.uint8)
    records[:, 1:] = pixels
    Path(path).write_bytes(records.tobytes())


def load_cifar10_split(root, split: str, subset: int | None = None) -> Dataset:
    """Load the train (data_batch_1..5.bin) or test (test_batch.bin) split.

    `root` defaults to the CLAE_DATA_DIR environment variable.
    """
    root = Path(root or os.environ.get("CLAE_DATA_DIR", "."))
    files = ([root / f"data_batch_{i}.bin" for i in range(1, 6)]
             if split == "train" else [root / "test_batch.bin"])
    parts = []
    remaining = subset
    for f in files:
        if not f.exists():
            raise DataFormatError(f"missing CIFAR-10 file {f}")
        part = load_cifar10(f, max_records=remaining)
        parts.append(part)
        if remaining is not None:
            remaining -= len(part)
            if remaining <= 0:
                break
    images = np.concatenate([p.images for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return Dataset(images, labels, class_count=10, name=f"cifar10-{split}")


def _class_template(c: int, classes: int, size: int) -> np.ndarray:
    """Deterministic colored geometric template for synthetic class c."""
    import colorsys

    rgb = np.array(colorsys.hsv_to_rgb(c / classes, 0.9, 0.9))
    img = np.full((3, size, size), 0.1)
    yy, xx = np.mgrid[0:size, 0:size]
    # Class-indexed position keeps templates linearly separable.
    cy = (size // 4) + (c * 2) % (size // 2)
    cx = (size // 4) + (c * 3) % (size // 2)
    r = max(2, size // 5)
    kind = c % 3
    if kind == 0:  # filled square
        mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    elif kind == 1:  # filled circle
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:  # horizontal bar
        mask = np.abs(yy - cy) <= max(1, r // 2)
    img[:, mask] = rgb[:, None]
    return img


def make_synthetic(classes: int, per_class: int, image_size: int = 16,
                   noise: float = 0.05, seed: int = 0) -> Dataset:
    """Colored geometric templates plus uniform noise, clipped to [0, 1]."""
    if classes < 2:
        raise ContractError("make_synthetic: needs >= 2 classes")
    rng = stream(seed, "data")
    templates = [_class_template(c, classes, image_size) for c in range(classes)]
    images = np.empty((classes * per_class, 3, image_size, image_size))
    labels = np.empty(classes * per_class, dtype=np.int64)
    i = 0
    for c in range(classes):
        for _ in range(per_class):
            noisy = templates[c] + rng.uniform(-noise, noise, size=templates[c].shape)
            images[i] = np.clip(noisy, 0.0, 1.0)
            labels[i] = c
            i += 1
    return Dataset(images, labels, class_count=classes, name="synthetic")


def augment(image: np.ndarray, policy: AugmentPolicy,
            rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a (C, H, W) image.

    Order: pad-and-random-crop, horizontal flip, color jitter, random
    grayscale.  Exactly DRAWS_PER_AUGMENT uniform draws are consumed per
    call, even for disabled transforms.
    """
    policy.validate()
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError("augment expects a (C, H, W) image")
    u = rng.random(DRAWS_PER_AUGMENT)

    if policy.crop_enabled and policy.crop_pad > 0:
        pad = policy.crop_pad
        _, h, w = x.shape
        padded = np.zeros((x.shape[0], h + 2 * pad, w + 2 * pad))
        padded[:, pad:pad + h, pad:pad + w] = x
        dy = int(u[0] * (2 * pad + 1))
        dx = int(u[1] * (2 * pad + 1))
        x = padded[:, dy:dy + h, dx:dx + w]

    if policy.hflip_enabled and u[2] < policy.hflip_prob:
        x = x[:, :, ::-1]

    if policy.jitter_enabled:
        b = 1.0 + (2.0 * u[3] - 1.0) * policy.brightness
        c = 1.0 + (2.0 * u[4] - 1.0) * policy.contrast
        s = 1.0 + (2.0 * u[5] - 1.0) * policy.saturation
        x = x * b
        mean = x.mean()
        x = (x - mean) * c + mean
        lum = np.tensordot(LUMA, x, axes=(0, 0))[None, :, :]
        x = (x - lum) * s + lum
        x = np.clip(x, 0.0, 1.0)

    if policy.grayscale_enabled and u[6] < policy.grayscale_prob:
        lum = np.tensordot(LUMA, x, axes=(0, 0))
        x = np.broadcast_to(lum, x.shape)

    return np.ascontiguousarray(x)


def augment_batch(images: np.ndarray, policy: AugmentPolicy,
                  rng: np.random.Generator) -> np.ndarray:
    """Augment each image in a (N, C, H, W) batch, in order."""
    return np.stack([augment(img, policy, rng) for img in images])
