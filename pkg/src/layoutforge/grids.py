"""Core grid types and elementary tensor operations shared by all phases.

Attention stacks, subject bookkeeping, binary masks and latent grids are
thin immutable wrappers over numpy arrays. All loss/gradient math runs in
float64; the on-disk exchange format is float32 (see exchange.py).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Shape or size mismatch between grids."""


@dataclass(frozen=True)
class AttentionMaps:
    """Per-token stack of spatial cross-attention maps, shape (P, P, N).

    Entries are nonnegative; slice ``token_map(s)`` is the P x P map of
    token ``s``.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"expected (P, P, N) attention stack, got {a.shape}")
        if a.shape[0] < 2 or a.shape[2] < 1:
            raise DimensionError(f"need P >= 2 and N >= 1, got {a.shape}")
        if np.any(a < 0):
            raise ValueError("attention values must be nonnegative")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def P(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[2]

    def token_map(self, s: int) -> np.ndarray:
        """P x P attention map of token s (read-only view)."""
        if not 0 <= s < self.N:
            raise IndexError(f"token {s} out of range [0, {self.N})")
        return self.data[:, :, s]


@dataclass(frozen=True)
class SubjectSet:
    """Ordered subject token indices plus an optional background token."""

    tokens: tuple[int, ...]
    background: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("subject token indices must be distinct")
        if any(t < 0 for t in self.tokens):
            raise ValueError("token indices must be nonnegative")
        if self.background is not None:
            object.__setattr__(self, "background", int(self.background))
            if self.background in self.tokens:
                raise ValueError("background token must differ from subject tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def validate_against(self, A: AttentionMaps) -> None:
        indices = list(self.tokens)
        if self.background is not None:
            indices.append(self.background)
        for t in indices:
            if t >= A.N:
                raise IndexError(f"token {t} out of range for N={A.N}")


@dataclass(frozen=True)
class BinaryGrid:
    """P x P boolean mask."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise DimensionError(f"expected square 2D mask, got {b.shape}")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def empty(cls, P: int) -> "BinaryGrid":
        return cls(np.zeros((P, P), dtype=bool))

    @property
    def P(self) -> int:
        return self.bits.shape[0]

    def area(self) -> int:
        return int(self.bits.sum())

    def complement(self) -> "BinaryGrid":
        return BinaryGrid(~self.bits)

    def union(self, other: "BinaryGrid") -> "BinaryGrid":
        return BinaryGrid(self.bits | other.bits)

    def intersection_area(self, other: "BinaryGrid") -> int:
        return int((self.bits & other.bits).sum())

    def contains(self, other: "BinaryGrid") -> bool:
        return bool(np.all(other.bits <= self.bits))


@dataclass(frozen=True)
class LatentGrid:
    """Channel-major latent map, shape (C, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.data, dtype=np.float64)
        if z.ndim != 3:
            raise DimensionError(f"expected (C, H, W) latent, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent entries must be finite")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "data", z)

    @property
    def C(self) -> int:
        return self.data.shape[0]

    @property
    def H(self) -> int:
        return self.data.shape[1]

    @property
    def W(self) -> int:
        return self.data.shape[2]

    def check_matches(self, A: AttentionMaps, factor: int = 4) -> None:
        if self.H != self.W or self.H != factor * A.P:
            raise DimensionError(
                f"latent side {self.H}x{self.W} does not match {factor}x patch grid P={A.P}"
            )


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise product of two equal-shape grids, summed."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def grayscale_dilate3x3(a: np.ndarray) -> np.ndarray:
    """Local 3x3 max filter; border windows are clipped to the grid."""
    a = np.asarray(a, dtype=np.float64)
    P, Q = a.shape
    out = a.copy()
    # shift in each of the 8 directions and take the running max
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), P + min(dy, 0))
            yd = slice(max(-dy, 0), P + min(-dy, 0))
            xs = slice(max(dx, 0), Q + min(dx, 0))
            xd = slice(max(-dx, 0), Q + min(-dx, 0))
            np.maximum(out[yd, xd], a[ys, xs], out=out[yd, xd])
    return out


def dilate3x3_argmax_sources(a: np.ndarray) -> np.ndarray:
    """For each output cell of grayscale_dilate3x3, the flat index of the
    source cell supplying the max (row-major first occurrence on ties).

    Used to route gradients back through the dilation.
    """
    a = np.asarray(a, dtype=np.float64)
    P, Q = a.shape
    src = np.empty((P, Q), dtype=np.intp)
    for i in range(P):
        y0, y1 = max(i - 1, 0), min(i + 2, P)
        for j in range(Q):
            x0, x1 = max(j - 1, 0), min(j + 2, Q)
            win = a[y0:y1, x0:x1]
            k = int(np.argmax(win))
            wi, wj = divmod(k, win.shape[1])
            src[i, j] = (y0 + wi) * Q + (x0 + wj)
    return src


def spatial_argmax(a: np.ndarray) -> tuple[int, int]:
    """Position of the maximum; ties resolve to the first row-major cell."""
    a = np.asarray(a)
    idx = int(np.argmax(a))
    return (idx // a.shape[1], idx % a.shape[1])
