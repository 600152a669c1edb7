"""Leakage metrics for reconstructions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

EIG_FLOOR = 1e-10


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def per_class_mse(a, b, labels, classes: int | None = None) -> np.ndarray:
    """Per-sample-class MSE; classes with no samples get NaN."""
    a, b = _pair(a, b)
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape != (a.shape[0],):
        raise ValueError(f"need one label per sample, got {labels.shape} for {a.shape[0]} samples")
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be non-negative")
    k = int(labels.max()) + 1 if classes is None else classes
    if labels.size and labels.max() >= k:
        raise ValueError(f"label {labels.max()} outside {k} classes")
    sq = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    out = np.full(k, np.nan)
    for c in range(k):
        m = labels == c
        if m.any():
            out[c] = sq[m].mean()
    return out


def _sqrtm_psd(S):
    w, V = eigh(S)
    return (V * np.sqrt(np.maximum(w, EIG_FLOOR))) @ V.T


def gaussian_frechet(a, b) -> float:
    """Frechet distance between Gaussian fits of two flattened sample batches.

    A pixel-space proxy for FID; no feature network is involved.
    ``Tr((Sa Sb)^{1/2})`` is evaluated as ``Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})``,
    which is symmetric and so admits an eigendecomposition.
    """
    A = np.asarray(a, dtype=np.float64)
    B = np.asarray(b, dtype=np.float64)
    A = A.reshape(A.shape[0], -1)
    B = B.reshape(B.shape[0], -1)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("need at least two samples per batch")
    mu_a, mu_b = A.mean(0), B.mean(0)
    Sa = np.atleast_2d(np.cov(A, rowvar=False))
    Sb = np.atleast_2d(np.cov(B, rowvar=False))
    try:
        ra = _sqrtm_psd(Sa)
        w = eigh(ra @ Sb @ ra, eigvals_only=True)
    except np.linalg.LinAlgError as e:
        raise ArithmeticError(f"eigendecomposition failed: {e}") from None
    cross = float(np.sum(np.sqrt(np.maximum(w, EIG_FLOOR))))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(Sa) + np.trace(Sb) - 2.0 * cross)
    return max(value, 0.0)


@dataclass
class LeakageMetrics:
    mse_x: float = float("nan")
    mse_z: float = float("nan")
    proxy_fid: float = float("nan")
    per_class_mse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accuracy: float = float("nan")
