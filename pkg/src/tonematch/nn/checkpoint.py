"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"DTMO1" | count | count x (name_len | utf8 name | rank | dims... | float32 LE values)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"DTMO1"


class CheckpointError(ValueError):
    pass


def encode(tensors) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    if not buf.startswith(MAGIC):
        raise CheckpointError("not a DTMO1 checkpoint")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("checkpoint is truncated")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    return out


def save(path, tensors) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return decode(Path(path).read_bytes())
