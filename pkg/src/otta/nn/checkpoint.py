"""Binary checkpoint format.

Layout (all little-endian)::

    magic        4s   b"OTTA"
    version      u16  1
    config       u32 x 7  n_channels n_samples n_classes n_temporal depth kernel_length pool
                 f64 x 2  dropout bn_momentum
    n_tensors    u32
    per tensor:
      name_len   u16, name (utf-8)
      ndim       u8,  dims u32 x ndim
      data       f32 x prod(dims)

Tensors are the network parameters followed by the batch-norm running
statistics (``<i>.batch_norm.running_mean`` / ``running_var``).
"""

from __future__ import annotations

import copy
import struct
from pathlib import Path

import numpy as np

from .model import ArchConfig, Network

MAGIC = b"OTTA"
VERSION = 1
_HEADER = struct.Struct("<4sH")
_CONFIG = struct.Struct("<7I2d")
_CONFIG_INT_FIELDS = ("n_channels", "n_samples", "n_classes", "n_temporal", "depth", "kernel_length", "pool")


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    """Truncated stream, trailing bytes or malformed records."""


class CheckpointShapeError(CheckpointError):
    pass


def _tensors(net: Network) -> dict[str, np.ndarray]:
    out = dict(net.params)
    idx = net.layers.index(net.bn)
    out[f"{idx}.batch_norm.running_mean"] = net.bn.running_mean
    out[f"{idx}.batch_norm.running_var"] = net.bn.running_var
    return out


def save_checkpoint(net: Network) -> bytes:
    a = net.arch
    parts = [
        _HEADER.pack(MAGIC, VERSION),
        _CONFIG.pack(*(getattr(a, k) for k in _CONFIG_INT_FIELDS), a.dropout, a.bn_momentum),
    ]
    tensors = _tensors(net)
    parts.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError(
                f"checkpoint truncated: need {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str | struct.Struct):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(data: bytes) -> Network:
    r = _Reader(bytes(data))
    if len(data) < _HEADER.size:
        raise CheckpointCorruptError("checkpoint shorter than its header")
    magic, version = r.unpack(_HEADER)
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {bytes(magic)!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    values = r.unpack(_CONFIG)
    try:
        arch = ArchConfig(**dict(zip(_CONFIG_INT_FIELDS, values[:7])), dropout=values[7], bn_momentum=values[8])
    except ValueError as exc:
        raise CheckpointCorruptError(f"invalid architecture block: {exc}") from exc
    net = Network(arch, seed=0, dtype=np.float32)
    expected = _tensors(net)
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise CheckpointShapeError(f"checkpoint holds {count} tensors, architecture needs {len(expected)}")
    seen = set()
    bn_idx = net.layers.index(net.bn)
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = bytes(r.take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointCorruptError("tensor name is not utf-8") from exc
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name not in expected or name in seen:
            raise CheckpointShapeError(f"unexpected tensor {name!r}")
        if tuple(shape) != expected[name].shape:
            raise CheckpointShapeError(f"tensor {name!r} has shape {tuple(shape)}, expected {expected[name].shape}")
        seen.add(name)
        count_f = int(np.prod(shape, dtype=np.int64))
        value = np.frombuffer(r.take(4 * count_f), dtype="<f4").reshape(shape).astype(np.float32)
        if name == f"{bn_idx}.batch_norm.running_mean":
            net.bn.running_mean = value
        elif name == f"{bn_idx}.batch_norm.running_var":
            net.bn.running_var = value
        else:
            net.set_param(name, value)
    if r.pos != len(r.data):
        raise CheckpointCorruptError(f"{len(r.data) - r.pos} trailing bytes after checkpoint")
    return net


def write_checkpoint(path, net: Network) -> None:
    Path(path).write_bytes(save_checkpoint(net))


def read_checkpoint(path) -> Network:
    return load_checkpoint(Path(path).read_bytes())


def clone(net: Network) -> Network:
    return copy.deepcopy(net)
