"""SLWP frames exchanged between client and server.

Frame layout, little-endian::

    "SLWP" | version u8 | msg_type u8 | step u64 | rank u8 | extents u32*rank | float64 payload

Every message carries a tensor section; HELLO and CLOSE use rank 0 with no
payload (15 bytes total), METRIC carries a rank-0 scalar (23 bytes).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SLWP"
VERSION = 1
HEADER = struct.Struct("<4sBBQB")
HEADER_SIZE = HEADER.size


class MsgType(enum.IntEnum):
    HELLO = 0
    FORWARD_ACT = 1
    BACKWARD_GRAD = 2
    METRIC = 3
    CLOSE = 4


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    step: int
    tensor: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if not 0 <= self.step < 2**64:
            raise WireError(f"step {self.step} outside u64")
        if self.tensor is not None:
            t = np.asarray(self.tensor, dtype=np.float64)
            if t.ndim > 4:
                raise WireError(f"tensor rank {t.ndim} exceeds 4")
            object.__setattr__(self, "tensor", t)
        if self.msg_type in (MsgType.FORWARD_ACT, MsgType.BACKWARD_GRAD):
            if self.tensor is None or self.tensor.ndim != 2:
                raise WireError(f"{self.msg_type.name} needs an n x d tensor")
        # rank 0 on the wire means "no tensor" except for METRIC
        if self.msg_type != MsgType.METRIC and self.tensor is not None and self.tensor.ndim == 0:
            raise WireError(f"{self.msg_type.name} cannot carry a bare scalar")
        if self.msg_type == MsgType.METRIC and (self.tensor is None or self.tensor.size != 1):
            raise WireError("METRIC carries exactly one float")

    @classmethod
    def metric(cls, step: int, value: float) -> "WireMessage":
        return cls(MsgType.METRIC, step, np.array(float(value)))

    @property
    def value(self) -> float:
        return float(self.tensor.reshape(-1)[0])

    def __eq__(self, other):
        if not isinstance(other, WireMessage):
            return NotImplemented
        return encode_message(self) == encode_message(other)

    __hash__ = None


def encode_message(msg: WireMessage) -> bytes:
    t = msg.tensor
    if t is None:
        shape, payload = (), b""
    else:
        shape, payload = t.shape, np.ascontiguousarray(t, dtype="<f8").tobytes()
    head = HEADER.pack(MAGIC, VERSION, int(msg.msg_type), int(msg.step), len(shape))
    return head + struct.pack(f"<{len(shape)}I", *shape) + payload


def frame_length(prefix: bytes) -> int | None:
    """Total frame size implied by ``prefix``, or None if more bytes are needed."""
    if len(prefix) < HEADER_SIZE:
        return None
    magic, version, mtype, _, rank = HEADER.unpack_from(prefix)
    _check_header(magic, version, mtype, rank)
    need = HEADER_SIZE + 4 * rank
    if len(prefix) < need:
        return None
    shape = struct.unpack_from(f"<{rank}I", prefix, HEADER_SIZE)
    count = int(np.prod(shape)) if rank else _scalar_count(mtype)
    return need + 8 * count


def _scalar_count(mtype: int) -> int:
    return 1 if mtype == MsgType.METRIC else 0


def _check_header(magic, version, mtype, rank):
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise WireError(f"unsupported version {version} at offset 4")
    if mtype not in MsgType._value2member_map_:
        raise WireError(f"unknown message type {mtype} at offset 5")
    if rank > 4:
        raise WireError(f"rank {rank} exceeds 4 at offset 14")


def decode_message(data: bytes) -> WireMessage:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise WireError(f"truncated frame: {len(data)} bytes, header needs {HEADER_SIZE}")
    magic, version, mtype, step, rank = HEADER.unpack_from(data)
    _check_header(magic, version, mtype, rank)
    if len(data) < HEADER_SIZE + 4 * rank:
        raise WireError("truncated frame inside shape extents")
    shape = struct.unpack_from(f"<{rank}I", data, HEADER_SIZE)
    body = HEADER_SIZE + 4 * rank
    count = int(np.prod(shape)) if rank else _scalar_count(mtype)
    if len(data) - body != 8 * count:
        raise WireError(
            f"payload length {len(data) - body} disagrees with shape {tuple(shape)} ({8 * count} bytes)"
        )
    if rank == 0 and count == 0:
        tensor = None
    else:
        tensor = np.frombuffer(data, dtype="<f8", count=count, offset=body).astype(np.float64)
        tensor = tensor.reshape(shape)
    try:
        return WireMessage(MsgType(mtype), step, tensor)
    except WireError as e:
        raise WireError(f"malformed {MsgType(mtype).name} frame: {e}") from None
