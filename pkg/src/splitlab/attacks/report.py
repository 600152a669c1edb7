"""Attack results and their on-disk forms (CSV, tensor dump, PGM)."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from splitlab import checkpoint
from splitlab.analysis import metrics

CURVE_COLUMNS = ("step", "mse_x", "mse_z", "enc_dec_err", "recon_err")


@dataclass
class AttackReport:
    reconstruction: np.ndarray
    mse_x: float = float("nan")
    mse_z: float = float("nan")
    proxy_fid: float = float("nan")
    per_class_mse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    curves: dict = field(default_factory=lambda: {c: [] for c in CURVE_COLUMNS})

    def log(self, **values) -> None:
        """Append one curve row; columns not given are recorded as NaN."""
        unknown = set(values) - set(CURVE_COLUMNS)
        if unknown:
            raise KeyError(f"unknown curve columns {sorted(unknown)}")
        for c in CURVE_COLUMNS:
            self.curves[c].append(float(values.get(c, np.nan)))

    @property
    def steps(self) -> int:
        return len(self.curves["step"])

    def score(self, X, labels=None) -> "AttackReport":
        """Fill the X-space metrics against the true features (evaluator side)."""
        X = np.asarray(X, dtype=np.float64)
        self.mse_x = metrics.mse(self.reconstruction, X)
        if X.shape[0] >= 2:
            self.proxy_fid = metrics.gaussian_frechet(self.reconstruction, X)
        if labels is not None:
            self.per_class_mse = metrics.per_class_mse(self.reconstruction, X, labels)
        return self

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CURVE_COLUMNS)
            for row in zip(*(self.curves[c] for c in CURVE_COLUMNS)):
                w.writerow([int(row[0])] + [repr(v) for v in row[1:]])

    def save(self, out_dir, prefix: str = "attack") -> None:
        os.makedirs(out_dir, exist_ok=True)
        self.write_csv(os.path.join(out_dir, f"{prefix}_curves.csv"))
        checkpoint.save_tensor(os.path.join(out_dir, f"{prefix}_reconstruction.slnn"), self.reconstruction)
        if self.reconstruction.ndim == 4:
            write_pgm_grid(os.path.join(out_dir, f"{prefix}_reconstruction.pgm"), self.reconstruction)


def to_pgm_bytes(image) -> bytes:
    """Binary PGM (P5) of a 2-D array in [0, 1]; values are clipped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    px = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def image_grid(images, cols: int = 8, pad: int = 1) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 4:
        images = images[:, 0]
    n, h, w = images.shape
    cols = max(1, min(cols, n))
    rows = -(-n // cols)
    grid = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad))
    for i in range(n):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = images[i]
    return grid


def write_pgm_grid(path, images, cols: int = 8) -> None:
    with open(path, "wb") as f:
        f.write(to_pgm_bytes(image_grid(images, cols)))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(v) for v in fields[1:])
    # exactly one whitespace byte separates the header from the pixels
    px = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w)
    return px / float(maxval)
