"""Versioned binary checkpoint.

Layout (all integers little-endian uint32)::

    magic        8 bytes  b"MRGCKPT\\0"
    version      u32      currently 1
    config_len   u32
    config       config_len bytes of UTF-8 JSON (sorted keys)
    n_tensors    u32
    n_tensors x:
        name_len u32, name (UTF-8)
        ndim     u32, ndim x u32 dims
        data     prod(dims) little-endian float64, row-major

Tensors are written in the network's parameter declaration order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .model import Network, NetworkConfig, build

MAGIC = b"MRGCKPT\0"
VERSION = 1


def to_bytes(net: Network, config: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode()
    parts += [struct.pack("<I", len(cfg)), cfg]
    named = net.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        raw = name.encode()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", p.ndim)]
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save(path, net: Network, config: dict) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(net, config))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(buf: bytes) -> tuple[Network, dict]:
    r = _Reader(buf)
    if r.take(8) != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config = json.loads(r.take(r.u32()).decode())
    net = build(NetworkConfig.from_dict({**config["net"], "input_shape": tuple(config["net"]["input_shape"])}))
    params = dict(net.named_parameters())
    n = r.u32()
    if n != len(params):
        raise FormatError(f"checkpoint has {n} tensors, network expects {len(params)}")
    for _ in range(n):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        if name not in params or params[name].shape != tuple(shape):
            raise FormatError(f"unexpected tensor {name} with shape {shape}")
        params[name].data = data
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint")
    return net, config


def load(path) -> tuple[Network, dict]:
    return from_bytes(Path(path).read_bytes())
