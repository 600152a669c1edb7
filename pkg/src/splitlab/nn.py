"""Minimal float64 neural-network engine with hand-written backward passes.

Every layer pairs an explicit ``forward`` with its ``backward``; there is no
autodiff graph. Arrays are batch-first and row-major. Layers are replaced,
never mutated in place, by the training code, so earlier snapshots of
parameter arrays stay valid.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from splitlab import kernels

ORTHO_TOL = 1e-10


class ShapeError(ValueError):
    """Input shape does not compose with a layer."""

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message if layer_index is None else f"layer {layer_index}: {message}")
        self.layer_index = layer_index


def as_tensor(x: Any, name: str = "tensor") -> np.ndarray:
    """Validate ``x`` as a finite float64 array of rank at most 4."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 4:
        raise ValueError(f"{name}: rank {arr.ndim} exceeds 4")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray | None = None

    kind = 1
    trainable = True

    def __post_init__(self):
        self.W = as_tensor(self.W, "dense weight")
        if self.W.ndim != 2:
            raise ValueError("dense weight must be d_in x d_out")
        if self.b is not None:
            self.b = as_tensor(self.b, "dense bias").reshape(-1)
            if self.b.shape[0] != self.W.shape[1]:
                raise ValueError("dense bias length must equal d_out")

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> "Dense":
        W = _uniform(rng, d_in, (d_in, d_out))
        b = _uniform(rng, d_in, (d_out,)) if bias else None
        return cls(W, b)

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W} if self.b is None else {"W": self.W, "b": self.b}

    def out_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.d_in:
            raise ShapeError(f"dense expects (n, {self.d_in}), got {tuple(shape)}")
        return (shape[0], self.d_out)

    def forward(self, x):
        y = x @ self.W
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, x, g):
        grads = {"W": x.T @ g}
        if self.b is not None:
            grads["b"] = g.sum(axis=0)
        return grads, g @ self.W.T


@dataclass
class Conv2d:
    """Valid (unpadded) 2-D convolution computed as an im2col matrix product."""

    W: np.ndarray
    b: np.ndarray | None = None
    stride: int = 1

    kind = 2
    trainable = True

    def __post_init__(self):
        self.W = as_tensor(self.W, "conv weight")
        if self.W.ndim != 4 or self.W.shape[2] != self.W.shape[3] or self.W.shape[2] < 1:
            raise ValueError("conv weight must be (c_out, c_in, k, k) with k >= 1")
        if self.stride < 1:
            raise ValueError("conv stride must be positive")
        if self.b is not None:
            self.b = as_tensor(self.b, "conv bias").reshape(-1)
            if self.b.shape[0] != self.W.shape[0]:
                raise ValueError("conv bias length must equal c_out")

    @classmethod
    def init(cls, c_in, c_out, k, rng, stride=1, bias=True) -> "Conv2d":
        fan_in = c_in * k * k
        W = _uniform(rng, fan_in, (c_out, c_in, k, k))
        b = _uniform(rng, fan_in, (c_out,)) if bias else None
        return cls(W, b, stride)

    @property
    def k(self) -> int:
        return self.W.shape[2]

    def params(self):
        return {"W": self.W} if self.b is None else {"W": self.W, "b": self.b}

    def out_shape(self, shape):
        c_out, c_in, k, _ = self.W.shape
        if len(shape) != 4 or shape[1] != c_in or shape[2] < k or shape[3] < k:
            raise ShapeError(f"conv2d expects (n, {c_in}, >={k}, >={k}), got {tuple(shape)}")
        return (
            shape[0],
            c_out,
            kernels.conv_out_size(shape[2], k, self.stride),
            kernels.conv_out_size(shape[3], k, self.stride),
        )

    def forward(self, x):
        n = x.shape[0]
        c_out = self.W.shape[0]
        _, _, oh, ow = self.out_shape(x.shape)
        cols = kernels.im2col(x, self.k, self.stride)
        y = cols @ self.W.reshape(c_out, -1).T
        if self.b is not None:
            y = y + self.b
        y = y.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x.shape, cols)

    def backward(self, cache, g):
        x_shape, cols = cache
        c_out = self.W.shape[0]
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        grads = {"W": (g2.T @ cols).reshape(self.W.shape)}
        if self.b is not None:
            grads["b"] = g2.sum(axis=0)
        dcols = g2 @ self.W.reshape(c_out, -1)
        return grads, kernels.col2im(dcols, x_shape, self.k, self.stride)


@dataclass
class ReLU:
    kind = 3
    trainable = False

    def params(self):
        return {}

    def out_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, g):
        return {}, g * mask


@dataclass
class MaxPool:
    k: int = 2

    kind = 4
    trainable = False

    def params(self):
        return {}

    def out_shape(self, shape):
        if len(shape) != 4 or shape[2] < self.k or shape[3] < self.k:
            raise ShapeError(f"maxpool({self.k}) expects rank-4 input at least {self.k}x{self.k}")
        return (shape[0], shape[1], shape[2] // self.k, shape[3] // self.k)

    def forward(self, x):
        out, arg = kernels.maxpool_forward(x, self.k)
        return out, (x.shape, arg)

    def backward(self, cache, g):
        x_shape, arg = cache
        return {}, kernels.maxpool_backward(g, arg, x_shape, self.k)


@dataclass
class Flatten:
    kind = 5
    trainable = False

    def params(self):
        return {}

    def out_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, x_shape, g):
        return {}, g.reshape(x_shape)


@dataclass
class FixedRotation:
    """Non-trainable right multiplication by an orthogonal matrix."""

    U: np.ndarray

    kind = 6
    trainable = False

    def __post_init__(self):
        self.U = as_tensor(self.U, "rotation")
        d = self.U.shape[0]
        if self.U.ndim != 2 or self.U.shape[1] != d:
            raise ValueError("rotation must be square")
        dev = np.max(np.abs(self.U.T @ self.U - np.eye(d)))
        if dev > ORTHO_TOL:
            raise ValueError(f"rotation is not orthogonal: max|U^T U - I| = {dev:.3e}")

    def params(self):
        return {}

    def out_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.U.shape[0]:
            raise ShapeError(f"fixed_rotation expects (n, {self.U.shape[0]}), got {tuple(shape)}")
        return tuple(shape)

    def forward(self, x):
        return x @ self.U, None

    def backward(self, _, g):
        return {}, g @ self.U.T


@dataclass
class Sigmoid:
    kind = 7
    trainable = False

    def params(self):
        return {}

    def out_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, y, g):
        return {}, g * y * (1.0 - y)


@dataclass
class Reshape:
    """Reshape each sample to ``shape`` (batch axis kept)."""

    shape: tuple

    kind = 8
    trainable = False

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)

    def params(self):
        return {}

    def out_shape(self, shape):
        if int(np.prod(shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {tuple(shape[1:])} to {self.shape}")
        return (shape[0], *self.shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape), x.shape

    def backward(self, x_shape, g):
        return {}, g.reshape(x_shape)


Layer = Dense | Conv2d | ReLU | MaxPool | Flatten | FixedRotation | Sigmoid | Reshape


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


@dataclass
class ForwardCache:
    entries: list
    input_shape: tuple
    output_shape: tuple
    consumed: bool = False


@dataclass
class Network:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if sum(isinstance(l, FixedRotation) for l in self.layers) > 1:
            raise ValueError("at most one fixed_rotation layer per network")

    def __len__(self):
        return len(self.layers)

    @property
    def parameter_count(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def parameters(self) -> list[tuple[int, str, np.ndarray]]:
        """Trainable arrays as ``(layer_index, name, array)`` in a fixed order."""
        return [(i, name, p) for i, layer in enumerate(self.layers) for name, p in layer.params().items()]

    def get_params(self) -> list[np.ndarray]:
        return [p for _, _, p in self.parameters()]

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        slots = self.parameters()
        if len(slots) != len(arrays):
            raise ValueError(f"expected {len(slots)} parameter arrays, got {len(arrays)}")
        for (i, name, old), new in zip(slots, arrays):
            new = np.asarray(new, dtype=np.float64)
            if new.shape != old.shape:
                raise ShapeError(f"parameter {name} shape {new.shape} != {old.shape}", i)
            setattr(self.layers[i], name, new)

    def flat_grads(self, grads: list[dict]) -> list[np.ndarray]:
        return [grads[i][name] for i, name, _ in self.parameters()]

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def output_shape(self, input_shape) -> tuple:
        shape = tuple(input_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(str(e), i) from None
        return shape

    def forward(self, x):
        return forward(self, x)

    def backward(self, cache, g_out, need_input_grad=True):
        return backward(self, cache, g_out, need_input_grad)


def forward(net: Network, x) -> tuple[np.ndarray, ForwardCache]:
    """Run ``x`` through every layer, keeping what backward needs."""
    x = as_tensor(x, "input")
    out_shape = net.output_shape(x.shape)
    entries = []
    h = x
    for layer in net.layers:
        h, c = layer.forward(h)
        entries.append(c)
    return h, ForwardCache(entries, x.shape, out_shape)


def backward(net: Network, cache: ForwardCache, g_out, need_input_grad: bool = True):
    """Backpropagate ``g_out`` through ``net``.

    Returns ``(param_grads, g_in)`` where ``param_grads[i]`` is a dict keyed
    like ``net.layers[i].params()``. ``g_in`` is ``None`` when
    ``need_input_grad`` is false.
    """
    if cache.consumed:
        raise ValueError("forward cache already consumed by a previous backward")
    if len(cache.entries) != len(net.layers):
        raise ValueError(f"cache has {len(cache.entries)} entries for {len(net.layers)} layers")
    g = np.asarray(g_out, dtype=np.float64)
    if g.shape != tuple(cache.output_shape):
        raise ShapeError(f"g_out shape {g.shape} != forward output {tuple(cache.output_shape)}")
    cache.consumed = True
    grads: list[dict] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if i == 0 and not need_input_grad and isinstance(layer, Dense):
            # skip the unused g @ W.T for the first layer
            grads[0] = {"W": cache.entries[0].T @ g}
            if layer.b is not None:
                grads[0]["b"] = g.sum(axis=0)
            return grads, None
        grads[i], g = layer.backward(cache.entries[i], g)
    return grads, (g if need_input_grad else None)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def loss_mse(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy averaged over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    value = -float(np.mean(log_p[np.arange(n), labels]))
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def total_variation(images) -> tuple[float, np.ndarray]:
    """Anisotropic total variation of an ``(n, c, h, w)`` batch, batch-averaged."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"total_variation expects rank 4, got rank {images.ndim}")
    return kernels.total_variation(images)
