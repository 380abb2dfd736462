"""Differentiable toy attention head: maps a latent grid to per-token
spatial attention via patch-wise softmax over learned-free key vectors.

Stands in for a real cross-attention backbone so guidance can be driven
and gradient-checked at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import AttentionMaps, DimensionError, LatentGrid

PATCH = 4  # latent cells per patch side


@dataclass(frozen=True)
class ToyAttentionModel:
    """Per-token key vectors of length C * PATCH^2, seeded and fixed."""

    keys: np.ndarray  # (N, C * PATCH * PATCH)

    @classmethod
    def create(cls, n_tokens: int, channels: int = 4, seed: int = 0) -> "ToyAttentionModel":
        rng = np.random.default_rng(seed)
        dim = channels * PATCH * PATCH
        keys = rng.standard_normal((n_tokens, dim)) / np.sqrt(dim)
        keys.setflags(write=False)
        return cls(keys=keys)

    @property
    def n_tokens(self) -> int:
        return self.keys.shape[0]

    def channels_for(self, z: LatentGrid) -> int:
        return self.keys.shape[1] // (PATCH * PATCH)


def _patch_blocks(z: LatentGrid) -> np.ndarray:
    """(P, P, C*16) view of the latent as flattened non-overlapping patches."""
    C, H, W = z.C, z.H, z.W
    if H != W or H % PATCH != 0:
        raise DimensionError(f"latent side {H}x{W} not a multiple of {PATCH}")
    P = H // PATCH
    return (
        z.data.reshape(C, P, PATCH, P, PATCH)
        .transpose(1, 3, 0, 2, 4)
        .reshape(P, P, C * PATCH * PATCH)
    )


def toy_attention(z: LatentGrid, model: ToyAttentionModel) -> AttentionMaps:
    """Softmax over tokens of key/patch inner products, per spatial patch."""
    blocks = _patch_blocks(z)
    if blocks.shape[2] != model.keys.shape[1]:
        raise DimensionError(
            f"latent channels do not match model keys ({blocks.shape[2]} vs {model.keys.shape[1]})"
        )
    logits = blocks @ model.keys.T  # (P, P, N)
    logits -= logits.max(axis=2, keepdims=True)
    e = np.exp(logits)
    return AttentionMaps(e / e.sum(axis=2, keepdims=True))


def attention_vjp(
    z: LatentGrid, model: ToyAttentionModel, A: AttentionMaps, grad_A: np.ndarray
) -> np.ndarray:
    """Pull a gradient w.r.t. the attention stack back to the latent.

    Softmax backward per location, then the linear patch map transposed.
    Returns an array shaped like z.data.
    """
    a = A.data
    g = np.asarray(grad_A, dtype=np.float64)
    if g.shape != a.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match attention {a.shape}")
    inner = (g * a).sum(axis=2, keepdims=True)
    g_logits = a * (g - inner)  # (P, P, N)
    g_blocks = g_logits @ model.keys  # (P, P, C*16)
    C = model.channels_for(z)
    P = a.shape[0]
    return (
        g_blocks.reshape(P, P, C, PATCH, PATCH)
        .transpose(2, 0, 3, 1, 4)
        .reshape(C, P * PATCH, P * PATCH)
    )
