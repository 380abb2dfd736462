"""Minimal binary tensor exchange format.

Layout (all little-endian):
  magic   4 bytes  b"XAMT"
  version u32      1
  dtype   u32      0 = float32 (only tag defined)
  rank    u32
  dims    rank x u32
  payload prod(dims) float32 values, row-major

Round-trips are bit-exact for float32 data by construction.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XAMT"
VERSION = 1
DTYPE_F32 = 0


class ExchangeFormatError(ValueError):
    """Malformed or unsupported exchange tensor file."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Serialize a rank-2 or rank-3 array as float32."""
    a = np.asarray(array)
    if a.ndim not in (2, 3):
        raise ValueError(f"only rank-2/3 tensors are supported, got rank {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")
    a = np.ascontiguousarray(a, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, DTYPE_F32, a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an exchange tensor file back as a float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ExchangeFormatError(f"{path}: missing XAMT magic")
    version, dtype, rank = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise ExchangeFormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise ExchangeFormatError(f"{path}: unsupported dtype tag {dtype}")
    if rank not in (2, 3):
        raise ExchangeFormatError(f"{path}: unsupported rank {rank}")
    header_end = 16 + 4 * rank
    if len(raw) < header_end:
        raise ExchangeFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 16)
    count = int(np.prod(dims))
    if len(raw) != header_end + 4 * count:
        raise ExchangeFormatError(
            f"{path}: payload size {len(raw) - header_end} != {4 * count} expected"
        )
    return np.frombuffer(raw[header_end:], dtype="<f4").reshape(dims).copy()
