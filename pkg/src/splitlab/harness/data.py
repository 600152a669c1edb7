"""Datasets: IDX files and seeded synthetic stand-ins."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from splitlab import rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) or (n, d), values in [0, 1] for images
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"{self.images.shape[0]} samples but labels shape {self.labels.shape}")
        if self.split not in ("train", "test", "public"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self):
        return self.images.shape[0]

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], split or self.split)


def _open(path):
    with open(path, "rb") as f:
        data = f.read()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def _parse(data: bytes, magic: int, what: str):
    if len(data) < 8:
        raise IdxError(f"{what}: truncated header at offset 0")
    (got,) = struct.unpack_from(">I", data, 0)
    if got != magic:
        raise IdxError(f"{what}: bad magic 0x{got:08x} at offset 0 (expected 0x{magic:08x})")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise IdxError(f"{what}: truncated dimension header at offset 4")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - start < count:
        raise IdxError(f"{what}: truncated payload at offset {start}: need {count} bytes, have {len(data) - start}")
    if len(data) - start > count:
        raise IdxError(f"{what}: {len(data) - start - count} trailing bytes after offset {start + count}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=start).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into ``(n, 1, h, w)`` floats."""
    imgs = _parse(_open(images_path), IMAGE_MAGIC, str(images_path))
    labs = _parse(_open(labels_path), LABEL_MAGIC, str(labels_path))
    if imgs.shape[0] != labs.shape[0]:
        raise IdxError(f"{imgs.shape[0]} images but {labs.shape[0]} labels")
    return Dataset(imgs[:, None].astype(np.float64) / 255.0, labs.astype(np.int64), split)


def write_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write ``ds`` as uncompressed IDX, quantising pixels to u8."""
    imgs = ds.images
    if imgs.ndim == 4:
        if imgs.shape[1] != 1:
            raise ValueError("IDX images must be single-channel")
        imgs = imgs[:, 0]
    if imgs.ndim != 3:
        raise ValueError("IDX images must be (n, h, w)")
    px = np.round(np.clip(imgs, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *px.shape))
        f.write(px.tobytes())
    if ds.labels.size and (ds.labels.min() < 0 or ds.labels.max() > 255):
        raise ValueError("IDX labels must fit in a byte")
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(ds)))
        f.write(ds.labels.astype(np.uint8).tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory) -> dict | None:
    """Paths of the four MNIST files in ``directory`` (plain or ``.gz``), or None."""
    found = {}
    for split, names in MNIST_FILES.items():
        paths = []
        for name in names:
            for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
                p = os.path.join(directory, cand)
                if os.path.exists(p):
                    paths.append(p)
                    break
            else:
                return None
        found[split] = tuple(paths)
    return found


def _balanced_labels(n, classes, g):
    labels = np.arange(n) % classes
    return g.permutation(labels)


def _prototypes(classes, hw, seed):
    """Smooth class templates: a few Gaussian bumps at class-specific places."""
    h, w = hw
    g = rng.stream(seed, "data.synthetic.prototypes")
    yy, xx = np.mgrid[0:h, 0:w]
    protos = np.zeros((classes, h, w))
    for c in range(classes):
        for _ in range(3):
            cy, cx = g.uniform(0, h - 1), g.uniform(0, w - 1)
            s = g.uniform(0.12, 0.25) * max(h, w)
            protos[c] += g.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        protos[c] /= protos[c].max()
    return protos


def synthetic_blobs(n: int, classes: int, seed: int, d: int | None = None,
                    image: tuple[int, int] | None = None, margin: float = 4.0,
                    noise: float = 0.05, split: str = "train") -> Dataset:
    """Deterministic class-structured data.

    Vector mode (``d``): Gaussian blobs with unit covariance whose means sit
    ``margin`` apart along distinct axes. Image mode (``image=(h, w)``):
    smooth class templates with a per-sample gain, a one-pixel jitter and a
    little pixel noise, clipped to ``[0, 1]``.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if (d is None) == (image is None):
        raise ValueError("give exactly one of d or image")
    g = rng.stream(seed, f"data.synthetic.{split}")
    labels = _balanced_labels(n, classes, g)
    if d is not None:
        means = np.zeros((classes, d))
        for c in range(classes):
            means[c, c % d] = margin * (1 + c // d)
        X = means[labels] + g.standard_normal((n, d))
        return Dataset(X, labels, split)
    protos = _prototypes(classes, image, seed)
    gain = g.uniform(0.7, 1.0, size=(n, 1, 1))
    shifts = g.integers(-1, 2, size=(n, 2))
    imgs = protos[labels] * gain
    for i in range(n):
        imgs[i] = np.roll(imgs[i], tuple(shifts[i]), axis=(0, 1))
    imgs = imgs + noise * g.standard_normal(imgs.shape)
    return Dataset(np.clip(imgs, 0.0, 1.0)[:, None], labels, split)
