"""Flat binary tensor dumps: magic, u32 rank, u64 extents, little-endian f64 payload."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import Tensor

MAGIC = b"SARDTNS1"


def dumps(x) -> bytes:
    arr = np.ascontiguousarray(x.data if isinstance(x, Tensor) else x, dtype="<f8")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:8] != MAGIC:
        raise ValueError("not a tensor dump (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 8)
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    offset = 12 + 8 * rank
    n = int(np.prod(shape)) if rank else 1
    if len(buf) != offset + 8 * n:
        raise ValueError(f"tensor dump payload size mismatch: expected {8 * n} bytes, got {len(buf) - offset}")
    return np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)


def save(path, x) -> None:
    Path(path).write_bytes(dumps(x))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
