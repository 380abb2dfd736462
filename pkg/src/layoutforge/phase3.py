"""Mask-following losses: keep attention inside its mask and fill it.

Both terms are squared relative deficits in [0, 1]; the combined loss
comes with a full analytic gradient (the attention-mass denominator is
differentiated too).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import AttentionMaps, BinaryGrid, SubjectSet, frobenius_inner
from .phase1 import LossWeights
from .phase2 import DegenerateMapError


@dataclass(frozen=True)
class MaskSet:
    """One nonempty target mask per subject."""

    masks: dict[int, BinaryGrid]

    def __post_init__(self):
        for s, m in self.masks.items():
            if m.area() == 0:
                raise DegenerateMapError(f"mask for subject {s} is empty")

    def for_subject(self, s: int) -> BinaryGrid:
        return self.masks[s]

    def validate_against(self, S: SubjectSet) -> None:
        if set(self.masks) != set(S.tokens):
            raise ValueError("mask set does not cover exactly the subject tokens")


def loss_inside(A: AttentionMaps, S: SubjectSet, M: MaskSet) -> float:
    """Mean squared deficit of the attention-mass fraction inside the mask."""
    M.validate_against(S)
    total = 0.0
    for s in S.tokens:
        a = A.token_map(s)
        mass = float(a.sum())
        if mass <= 0:
            raise DegenerateMapError(f"attention map for subject {s} is all zero")
        inside = frobenius_inner(a, M.for_subject(s).bits.astype(np.float64))
        total += (1.0 - inside / mass) ** 2
    return total / len(S)


def loss_fill(A: AttentionMaps, S: SubjectSet, M: MaskSet) -> float:
    """Mean squared deficit of the mask-average attention from 1."""
    M.validate_against(S)
    total = 0.0
    for s in S.tokens:
        m = M.for_subject(s)
        inside = frobenius_inner(A.token_map(s), m.bits.astype(np.float64))
        total += (1.0 - inside / m.area()) ** 2
    return total / len(S)


def loss_phase3(
    A: AttentionMaps, S: SubjectSet, M: MaskSet, w: LossWeights
) -> tuple[float, np.ndarray]:
    """Weighted inside + fill loss and its gradient w.r.t. the attention stack."""
    M.validate_against(S)
    S.validate_against(A)
    P, N = A.P, A.N
    n = len(S)
    grad = np.zeros((P, P, N), dtype=np.float64)
    li = 0.0
    lf = 0.0
    for s in S.tokens:
        a = np.maximum(A.token_map(s), 0.0)
        m = M.for_subject(s).bits.astype(np.float64)
        mass = float(a.sum())
        if mass <= 0:
            raise DegenerateMapError(f"attention map for subject {s} is all zero")
        inside = float((a * m).sum())
        area = float(m.sum())

        r_in = inside / mass
        li += (1.0 - r_in) ** 2
        # d r_in / dA = (m * mass - inside) / mass^2
        d_rin = (m * mass - inside) / (mass * mass)
        grad[:, :, s] += w.lambda_inside * (-2.0 * (1.0 - r_in) / n) * d_rin

        r_fill = inside / area
        lf += (1.0 - r_fill) ** 2
        grad[:, :, s] += w.lambda_fill * (-2.0 * (1.0 - r_fill) / n) * (m / area)

    li /= n
    lf /= n
    return w.lambda_inside * li + w.lambda_fill * lf, grad
