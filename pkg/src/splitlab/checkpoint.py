"""Binary checkpoints for networks, optimizer state and raw tensors.

Layout (all integers little-endian)::

    "SLNN" | version u16 | layer count u16
    per layer:  kind u8 | attr count u8 | attrs u32* | tensor count u8 | tensor*
    tensor:     rank u8 | extents u32*rank | float64 payload
    section count u16
    per section: kind u8 | float count u64 | float64 payload

Layer kinds match ``Layer.kind``; kind 255 holds a bare tensor (used for
reconstruction dumps). Section kinds are optimizer codes from
``optim.OPTIMIZER_KINDS``.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from splitlab import nn
from splitlab.optim import OPTIMIZER_KINDS, Optimizer

MAGIC = b"SLNN"
VERSION = 1
RAW_KIND = 255

_LAYER_TYPES = {cls.kind: cls for cls in
                (nn.Dense, nn.Conv2d, nn.ReLU, nn.MaxPool, nn.Flatten,
                 nn.FixedRotation, nn.Sigmoid, nn.Reshape)}
_OPT_NAMES = {v: k for k, v in OPTIMIZER_KINDS.items()}


class CheckpointError(ValueError):
    pass


def _write_tensor(buf, arr):
    arr = np.asarray(arr, dtype="<f8")
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint at offset {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated float payload at offset {self.pos}")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += size
        return arr

    def tensor(self) -> np.ndarray:
        (rank,) = self.take("<B")
        shape = self.take(f"<{rank}I") if rank else ()
        return self.floats(int(np.prod(shape))).reshape(shape)


def _layer_record(layer):
    if isinstance(layer, nn.Dense):
        return [], list(layer.params().values())
    if isinstance(layer, nn.Conv2d):
        return [layer.stride], list(layer.params().values())
    if isinstance(layer, nn.MaxPool):
        return [layer.k], []
    if isinstance(layer, nn.FixedRotation):
        return [], [layer.U]
    if isinstance(layer, nn.Reshape):
        return list(layer.shape), []
    return [], []


def _build_layer(kind, attrs, tensors):
    cls = _LAYER_TYPES.get(kind)
    if cls is None:
        raise CheckpointError(f"unknown layer kind {kind}")
    if cls is nn.Dense:
        return nn.Dense(tensors[0], tensors[1] if len(tensors) > 1 else None)
    if cls is nn.Conv2d:
        return nn.Conv2d(tensors[0], tensors[1] if len(tensors) > 1 else None, stride=attrs[0])
    if cls is nn.MaxPool:
        return nn.MaxPool(attrs[0])
    if cls is nn.FixedRotation:
        return nn.FixedRotation(tensors[0])
    if cls is nn.Reshape:
        return nn.Reshape(tuple(attrs))
    return cls()


def dumps(net: nn.Network | None = None, optimizers=(), tensor=None) -> bytes:
    buf = io.BytesIO()
    layers = [] if net is None else net.layers
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", VERSION, len(layers) + (tensor is not None)))
    for layer in layers:
        attrs, tensors = _layer_record(layer)
        buf.write(struct.pack("<BB", layer.kind, len(attrs)))
        buf.write(struct.pack(f"<{len(attrs)}I", *attrs))
        buf.write(struct.pack("<B", len(tensors)))
        for t in tensors:
            _write_tensor(buf, t)
    if tensor is not None:
        buf.write(struct.pack("<BBB", RAW_KIND, 0, 1))
        _write_tensor(buf, tensor)
    buf.write(struct.pack("<H", len(optimizers)))
    for opt in optimizers:
        payload = np.asarray(opt.to_floats(), dtype="<f8")
        buf.write(struct.pack("<BQ", OPTIMIZER_KINDS[opt.name], payload.size))
        buf.write(payload.tobytes())
    return buf.getvalue()


def loads(data: bytes):
    """Parse a checkpoint into ``(network, optimizer sections, raw tensors)``.

    Optimizer sections come back as ``(name, floats)``; rebuild them with
    :func:`restore_optimizer` once the matching parameter shapes are known.
    """
    r = _Reader(data)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    version, n_layers = r.take("<HH")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    layers, raw = [], []
    for _ in range(n_layers):
        kind, n_attrs = r.take("<BB")
        attrs = list(r.take(f"<{n_attrs}I")) if n_attrs else []
        (n_tensors,) = r.take("<B")
        tensors = [r.tensor() for _ in range(n_tensors)]
        if kind == RAW_KIND:
            raw.extend(tensors)
        else:
            layers.append(_build_layer(kind, attrs, tensors))
    (n_sections,) = r.take("<H")
    sections = []
    for _ in range(n_sections):
        kind, count = r.take("<BQ")
        if kind not in _OPT_NAMES:
            raise CheckpointError(f"unknown optimizer section kind {kind}")
        sections.append((_OPT_NAMES[kind], r.floats(count)))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after offset {r.pos}")
    return nn.Network(layers), sections, raw


def restore_optimizer(section, net: nn.Network) -> Optimizer:
    name, floats = section
    return Optimizer.from_floats(name, floats, [p.shape for p in net.get_params()])


def save(path, net=None, optimizers=(), tensor=None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(net, optimizers, tensor))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


def save_tensor(path, tensor) -> None:
    save(path, tensor=tensor)


def load_tensor(path) -> np.ndarray:
    _, _, raw = load(path)
    if len(raw) != 1:
        raise CheckpointError(f"expected one raw tensor, found {len(raw)}")
    return raw[0]
