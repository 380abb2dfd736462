"""Phase I losses: blocked excitation, overlap and norm regularization.

Loss evaluation and the analytic gradient with respect to the attention
stack. Max operators route gradient to a single tie-broken argmax cell;
blocking masks are treated as constants under differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import (
    AttentionMaps,
    BinaryGrid,
    SubjectSet,
    dilate3x3_argmax_sources,
    frobenius_inner,
    grayscale_dilate3x3,
    spatial_argmax,
)


@dataclass(frozen=True)
class LossWeights:
    """Scaling factors for all loss terms plus the blocking rectangle size."""

    lambda_be: float = 1.0
    lambda_ol: float = 0.5
    lambda_norm: float = 0.1
    lambda_inside: float = 1.0
    lambda_fill: float = 1.0
    rect_side: int | None = None  # None -> max(3, P // 4) at use time

    def __post_init__(self):
        for name in ("lambda_be", "lambda_ol", "lambda_norm", "lambda_inside", "lambda_fill"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.rect_side is not None and self.rect_side < 1:
            raise ValueError("rect_side must be >= 1")

    def effective_rect_side(self, P: int) -> int:
        side = self.rect_side if self.rect_side is not None else max(3, P // 4)
        return min(side, P)


@dataclass(frozen=True)
class BlockingSequence:
    """Sorted subject order and the cumulative exclusion masks, one per token."""

    order: tuple[int, ...]
    masks: tuple[BinaryGrid, ...]

    def mask_before(self, i: int) -> BinaryGrid:
        """Exclusion mask seen by the i-th sorted subject (empty for i=0)."""
        if i == 0:
            return BinaryGrid.empty(self.masks[0].P)
        return self.masks[i - 1]


def sort_tokens_by_max(A: AttentionMaps, S: SubjectSet) -> list[int]:
    """Subject tokens sorted by descending max attention, ties by index."""
    if len(S) == 0:
        raise ValueError("subject set is empty")
    S.validate_against(A)
    return sorted(S.tokens, key=lambda s: (-float(A.token_map(s).max()), s))


def _centered_rectangle(P: int, center: tuple[int, int], side: int) -> np.ndarray:
    """Boolean rectangle of the given side centered on a cell, clipped to the grid."""
    r, c = center
    lo = (side - 1) // 2
    hi = side // 2
    y0, y1 = max(r - lo, 0), min(r + hi + 1, P)
    x0, x1 = max(c - lo, 0), min(c + hi + 1, P)
    rect = np.zeros((P, P), dtype=bool)
    rect[y0:y1, x0:x1] = True
    return rect


def build_blocking_sequence(A: AttentionMaps, S: SubjectSet, w: LossWeights) -> BlockingSequence:
    """Cumulative exclusion masks: each sorted subject adds a rectangle
    around the argmax of its attention filtered by all prior masks."""
    order = sort_tokens_by_max(A, S)
    P = A.P
    side = w.effective_rect_side(P)
    masks: list[BinaryGrid] = []
    acc = np.zeros((P, P), dtype=bool)
    for s in order:
        filtered = A.token_map(s) * (~acc)
        peak = spatial_argmax(filtered)
        acc = acc | _centered_rectangle(P, peak, side)
        masks.append(BinaryGrid(acc))
    return BlockingSequence(order=tuple(order), masks=tuple(masks))


def loss_be(A: AttentionMaps, S: SubjectSet, seq: BlockingSequence) -> float:
    """Worst-subject excitation deficit under the cumulative blocking masks.

    Reduces to the plain least-attended-token loss when there is a single
    subject.
    """
    worst = -np.inf
    for i, s in enumerate(seq.order):
        filtered = A.token_map(s) * (~seq.mask_before(i).bits)
        worst = max(worst, 1.0 - float(filtered.max()))
    return worst


def loss_overlap(A: AttentionMaps, S: SubjectSet) -> tuple[dict[int, float], float]:
    """Mean pairwise Frobenius overlap of the dilated subject maps.

    Returns (per-subject values, total). All zeros for a single subject.
    """
    if len(S) < 2:
        return ({s: 0.0 for s in S.tokens}, 0.0)
    dilated = {s: grayscale_dilate3x3(A.token_map(s)) for s in S.tokens}
    per: dict[int, float] = {}
    for s in S.tokens:
        acc = 0.0
        for s2 in S.tokens:
            if s2 != s:
                acc += frobenius_inner(dilated[s], dilated[s2])
        per[s] = acc / (len(S) - 1)
    return per, float(sum(per.values()))


def norm_threshold(P: int, n_subjects: int) -> float:
    """Attention-budget cutoff: grid area split evenly across subjects."""
    return P * P / n_subjects


def loss_norm(A: AttentionMaps, S: SubjectSet) -> dict[int, float]:
    """Conditional norm penalty: the Frobenius norm where it exceeds the
    per-subject budget, zero otherwise."""
    C = norm_threshold(A.P, len(S))
    out: dict[int, float] = {}
    for s in S.tokens:
        fro = float(np.linalg.norm(A.token_map(s)))
        out[s] = fro if fro > C else 0.0
    return out


def loss_phase1_value(A: AttentionMaps, S: SubjectSet, w: LossWeights) -> float:
    """Combined Phase I loss without the gradient (cheap path for
    finite-difference probing)."""
    seq = build_blocking_sequence(A, S, w)
    lbe = loss_be(A, S, seq)
    _, ol_total = loss_overlap(A, S)
    norm_total = sum(loss_norm(A, S).values())
    return w.lambda_be * lbe + w.lambda_ol * ol_total + w.lambda_norm * norm_total


@dataclass(frozen=True)
class Phase1Breakdown:
    """Component values behind a combined Phase I evaluation."""

    loss_be: float
    loss_ol_per_subject: dict[int, float]
    loss_ol_total: float
    loss_norm_per_subject: dict[int, float]
    total: float


def loss_phase1(
    A: AttentionMaps, S: SubjectSet, w: LossWeights
) -> tuple[float, np.ndarray, Phase1Breakdown]:
    """Combined Phase I loss and its gradient w.r.t. the attention stack.

    Gradient conventions: max operators contribute only at the tie-broken
    argmax cell; the norm indicator is held fixed; blocking masks are
    constants.
    """
    if not np.all(np.isfinite(A.data)):
        raise FloatingPointError("attention stack contains non-finite values")
    S.validate_against(A)
    P, N = A.P, A.N
    grad = np.zeros((P, P, N), dtype=np.float64)

    seq = build_blocking_sequence(A, S, w)

    # blocked-excitation term: subgradient at the worst subject's peak
    lbe = -np.inf
    be_cell: tuple[int, int, int] | None = None
    for i, s in enumerate(seq.order):
        blocked = seq.mask_before(i).bits
        filtered = A.token_map(s) * (~blocked)
        val = 1.0 - float(filtered.max())
        if val > lbe:
            lbe = val
            r, c = spatial_argmax(filtered)
            # a blocked argmax cell (all-zero filtered map) carries no gradient
            be_cell = None if blocked[r, c] else (r, c, s)
    if w.lambda_be > 0 and be_cell is not None:
        r, c, s = be_cell
        grad[r, c, s] -= w.lambda_be

    # overlap term: route through the dilation argmax map
    ol_per, ol_total = loss_overlap(A, S)
    if w.lambda_ol > 0 and len(S) >= 2:
        dilated = {s: grayscale_dilate3x3(A.token_map(s)) for s in S.tokens}
        sources = {s: dilate3x3_argmax_sources(A.token_map(s)) for s in S.tokens}
        scale = 2.0 * w.lambda_ol / (len(S) - 1)
        for s in S.tokens:
            others = sum(dilated[s2] for s2 in S.tokens if s2 != s)
            g_flat = np.zeros(P * P, dtype=np.float64)
            np.add.at(g_flat, sources[s].ravel(), scale * others.ravel())
            grad[:, :, s] += g_flat.reshape(P, P)

    # conditional norm term
    norm_per = loss_norm(A, S)
    if w.lambda_norm > 0:
        for s in S.tokens:
            if norm_per[s] > 0:
                grad[:, :, s] += w.lambda_norm * A.token_map(s) / norm_per[s]

    total = w.lambda_be * lbe + w.lambda_ol * ol_total + w.lambda_norm * sum(norm_per.values())
    breakdown = Phase1Breakdown(
        loss_be=lbe,
        loss_ol_per_subject=ol_per,
        loss_ol_total=ol_total,
        loss_norm_per_subject=norm_per,
        total=total,
    )
    return total, grad, breakdown
