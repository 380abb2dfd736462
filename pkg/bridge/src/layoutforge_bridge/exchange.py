"""Exchange-tensor files (.xamt), implemented independently against the
published format so the bridge carries no dependency on the engine package.

Layout (little-endian): magic ``XAMT``, version u32 = 1, dtype u32 = 0
(float32), rank u32 (2 or 3), dims u32[rank], row-major float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XAMT"
VERSION = 1
DTYPE_F32 = 0


class ExchangeFormatError(ValueError):
    """File does not conform to the exchange-tensor format."""


def export_tensor(array, path: str | Path) -> None:
    """Write an array-like of rank 2 or 3 as an exchange-tensor file."""
    a = np.asarray(array)
    if a.ndim not in (2, 3):
        raise ValueError(f"tensor rank must be 2 or 3, got {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")
    a = np.ascontiguousarray(a, dtype="<f4")
    header = MAGIC + struct.pack("<III", VERSION, DTYPE_F32, a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + dims + a.tobytes())


def import_tensor(path: str | Path) -> np.ndarray:
    """Read an exchange-tensor file back into a float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ExchangeFormatError(f"{path}: bad magic")
    version, dtype, rank = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ExchangeFormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise ExchangeFormatError(f"{path}: unsupported dtype code {dtype}")
    if rank not in (2, 3):
        raise ExchangeFormatError(f"{path}: bad rank {rank}")
    if len(raw) < 16 + 4 * rank:
        raise ExchangeFormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", raw[16:16 + 4 * rank])
    payload = raw[16 + 4 * rank:]
    expected = 4 * int(np.prod(dims))
    if len(payload) != expected:
        raise ExchangeFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
