"""Client-side protections: orthogonal reparametrisation and Gaussian noise.

``apply_pair_transform`` swaps ``(X, W1)`` for ``(XU, U^T W1)``, which leaves
the first-layer product unchanged. ``insert_fixed_rotation_at_cut`` does the
same one layer deeper, in front of the dense layer whose output crosses the
party boundary. The DP helpers calibrate the analytic Gaussian mechanism by
bisection on its defining inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from splitlab import nn, rng


def random_orthogonal(d: int, seed: int, name: str = "defense.rotation") -> np.ndarray:
    """Haar-distributed ``d x d`` orthogonal matrix from a seeded Gaussian QR."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    A = rng.stream(seed, name).standard_normal((d, d))
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def is_orthogonal(U, tol: float = nn.ORTHO_TOL) -> bool:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return float(np.max(np.abs(U.T @ U - np.eye(U.shape[0])))) <= tol


def rotation_2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def apply_pair_transform(X, W1, U) -> tuple[np.ndarray, np.ndarray]:
    X, W1, U = (np.asarray(a, dtype=np.float64) for a in (X, W1, U))
    if X.ndim != 2 or W1.ndim != 2 or U.shape != (X.shape[1], X.shape[1]) or W1.shape[0] != X.shape[1]:
        raise nn.ShapeError(f"need X n x d, W1 d x h, U d x d; got {X.shape}, {W1.shape}, {U.shape}")
    if not is_orthogonal(U):
        raise ValueError("U is not orthogonal")
    return X @ U, U.T @ W1


def transform_client(net: nn.Network, X, U) -> tuple[nn.Network, np.ndarray]:
    """Pair-transform a client whose first layer is dense: returns ``(net', XU)``."""
    if not net.layers or not isinstance(net.layers[0], nn.Dense):
        raise ValueError("first client layer must be dense")
    out = net.copy()
    Xt, Wt = apply_pair_transform(X, out.layers[0].W, U)
    out.layers[0].W = Wt
    return out, Xt


def insert_fixed_rotation_at_cut(net: nn.Network, U, cut: int | None = None) -> nn.Network:
    """Insert a frozen ``U`` before dense layer ``cut`` and replace its ``W`` by ``U^T W``.

    ``cut`` defaults to the last dense layer of the client.
    """
    if cut is None:
        dense = [i for i, l in enumerate(net.layers) if isinstance(l, nn.Dense)]
        if not dense:
            raise ValueError("client has no dense layer")
        cut = dense[-1]
    if not 0 <= cut < len(net.layers) or not isinstance(net.layers[cut], nn.Dense):
        raise ValueError(f"layer {cut} is not a dense cut layer")
    U = np.asarray(U, dtype=np.float64)
    layer = net.layers[cut]
    if U.shape != (layer.d_in, layer.d_in):
        raise nn.ShapeError(f"rotation {U.shape} does not match cut input width {layer.d_in}", cut)
    out = net.copy()
    rotated = nn.Dense(U.T @ layer.W, None if layer.b is None else layer.b.copy())
    out.layers[cut] = rotated
    out.layers.insert(cut, nn.FixedRotation(U))
    return nn.Network(out.layers)


# --------------------------------------------------------------------------
# Gaussian mechanism
# --------------------------------------------------------------------------


def l2_sensitivity_estimate(batch, mode: str = "worst", rng_: np.random.Generator | None = None) -> float:
    """Distance between ``batch`` and ``batch`` with one row zeroed.

    ``mode="worst"`` maximises over rows (an upper bound over the random-row
    estimate); ``mode="random"`` zeroes one row drawn from ``rng_``.
    """
    B = np.asarray(batch, dtype=np.float64)
    if B.ndim < 1 or B.shape[0] == 0:
        raise ValueError("empty batch")
    norms = np.sqrt(np.sum(B.reshape(B.shape[0], -1) ** 2, axis=1))
    if mode == "worst":
        return float(norms.max())
    if mode == "random":
        if rng_ is None:
            raise ValueError("random mode needs an rng")
        return float(norms[rng_.integers(B.shape[0])])
    raise ValueError(f"unknown sensitivity mode {mode!r}")


def analytic_gaussian_delta(eps: float, sensitivity: float, sigma: float) -> float:
    """Smallest delta the Gaussian mechanism with scale ``sigma`` achieves at ``eps``."""
    a = sensitivity / (2.0 * sigma)
    b = eps * sigma / sensitivity
    return float(ndtr(a - b) - math.exp(eps) * ndtr(-a - b))


def classical_sigma(eps: float, delta: float, sensitivity: float) -> float:
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


def dp_calibrate_sigma(eps: float, delta: float, sensitivity: float, rtol: float = 1e-9) -> float:
    """Minimal sigma meeting the analytic Gaussian condition, to relative ``rtol``.

    The returned value always satisfies the condition (it is the upper end of
    the final bracket).
    """
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")

    def ok(s):
        return analytic_gaussian_delta(eps, sensitivity, s) <= delta

    hi = classical_sigma(eps, delta, sensitivity)
    grow = 0
    while not ok(hi):
        hi *= 2.0
        grow += 1
        if grow > 200:
            raise ArithmeticError("could not bracket sigma from above")
    lo = hi / 2.0
    shrink = 0
    while ok(lo):
        hi, lo = lo, lo / 2.0
        shrink += 1
        if shrink > 2000:
            raise ArithmeticError("could not bracket sigma from below")
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def dp_perturb(activations, sigma: float, rng_: np.random.Generator) -> np.ndarray:
    A = np.asarray(activations, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return A.copy()
    return A + rng_.normal(0.0, sigma, size=A.shape)


@dataclass
class DpConfig:
    epsilon: float = 1.0
    delta: float = 1e-5
    sensitivity: float = 1.0
    sigma_override: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0 or not 0 < self.delta < 1 or not self.sensitivity > 0:
            raise ValueError("need epsilon > 0, 0 < delta < 1, sensitivity > 0")
        if self.sigma_override is not None and not self.sigma_override > 0:
            raise ValueError("sigma override must be positive")

    @property
    def sigma(self) -> float:
        if self.sigma_override is not None:
            return float(self.sigma_override)
        return dp_calibrate_sigma(self.epsilon, self.delta, self.sensitivity)

    def holds(self) -> bool:
        """Whether the analytic condition holds at the effective sigma."""
        return analytic_gaussian_delta(self.epsilon, self.sensitivity, self.sigma) <= self.delta
