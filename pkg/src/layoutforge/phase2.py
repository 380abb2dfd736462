"""One-shot layout rearrangement: threshold masks, mover selection,
exhaustive shift search under the no-upward constraint, and latent patch
migration with imputation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import AttentionMaps, BinaryGrid, DimensionError, LatentGrid, SubjectSet

UPSCALE = 4  # latent cells per patch, per dimension


class DegenerateMapError(ValueError):
    """All-zero attention map or empty mask where substance is required."""


class ConfigError(ValueError):
    """Inconsistent configuration (e.g. background copy without background)."""


@dataclass(frozen=True)
class GammaConfig:
    """Adaptive threshold-fraction settings for mask extraction."""

    gamma0: float = 0.2
    step: float = 0.05
    gamma_min: float = 0.2
    gamma_max: float = 0.8
    area_lo: int | None = None  # None -> ceil(P^2 / (4 |S|))
    area_hi: int | None = None  # None -> floor(2 P^2 / |S|)

    def __post_init__(self):
        if not self.gamma_min <= self.gamma0 < self.gamma_max:
            raise ValueError("gamma0 must lie in [gamma_min, gamma_max)")
        if self.step <= 0:
            raise ValueError("step must be positive")

    def area_bounds(self, P: int, n_subjects: int) -> tuple[int, int]:
        lo = self.area_lo if self.area_lo is not None else math.ceil(P * P / (4 * n_subjects))
        hi = self.area_hi if self.area_hi is not None else min((2 * P * P) // n_subjects, P * P)
        if not 0 < lo < hi <= P * P:
            raise ValueError(f"invalid area bounds ({lo}, {hi}) for P={P}")
        return lo, hi


@dataclass(frozen=True)
class Shift:
    """Integer patch displacement; dy >= 0 (downward only) when applied."""

    dy: int = 0
    dx: int = 0

    def is_identity(self) -> bool:
        return self.dy == 0 and self.dx == 0


@dataclass(frozen=True)
class LayoutPlan:
    """Initial and final per-subject masks plus the applied mover shifts."""

    subjects: tuple[int, ...]
    initial_masks: dict[int, BinaryGrid]
    final_masks: dict[int, BinaryGrid]
    movers: tuple[tuple[int, Shift], ...]  # in application order
    overlap_before: int
    overlap_after: int

    def is_identity(self) -> bool:
        return all(shift.is_identity() for _, shift in self.movers)


@dataclass(frozen=True)
class ImputationConfig:
    """How vacated latent cells are refilled after migration."""

    mode: str = "random-normal"  # or "background-copy"
    k: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("random-normal", "background-copy"):
            raise ConfigError(f"unknown imputation mode {self.mode!r}")
        if self.mode == "background-copy" and self.k < 1:
            raise ConfigError("background-copy requires k >= 1")


def threshold_mask(a: np.ndarray, gamma: float) -> BinaryGrid:
    """Bits set strictly above gamma times the map's maximum."""
    a = np.asarray(a, dtype=np.float64)
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    peak = float(a.max())
    if peak <= 0:
        raise DegenerateMapError("cannot threshold an all-zero map")
    return BinaryGrid(a > gamma * peak)


def adapt_gamma(a: np.ndarray, cfg: GammaConfig, n_subjects: int) -> float:
    """Walk gamma in fixed steps until the mask area lands in the target
    band, or return the clamp boundary when the band is unreachable."""
    a = np.asarray(a, dtype=np.float64)
    P = a.shape[0]
    lo, hi = cfg.area_bounds(P, n_subjects)
    gamma = cfg.gamma0
    area = threshold_mask(a, gamma).area()
    eps = 1e-9
    if area > hi:
        # larger gamma -> smaller mask
        while area > hi and gamma + cfg.step < cfg.gamma_max - eps:
            gamma += cfg.step
            area = threshold_mask(a, gamma).area()
    elif area < lo:
        while area < lo and gamma - cfg.step >= cfg.gamma_min - eps:
            gamma -= cfg.step
            area = threshold_mask(a, gamma).area()
    return round(gamma, 10)


def mover_ratio(masks: list[BinaryGrid], s: int) -> float:
    """Overlap-with-others area over own area for mask s."""
    own = masks[s].area()
    if own == 0:
        raise DegenerateMapError(f"mask {s} has zero area")
    inter = sum(masks[s].intersection_area(m) for i, m in enumerate(masks) if i != s)
    return inter / own


def select_movers(masks: list[BinaryGrid]) -> list[int]:
    """Indices of the two masks with the highest overlap ratios, ties by
    ascending index; empty when nothing overlaps or fewer than two masks."""
    if len(masks) < 2:
        return []
    ratios = [mover_ratio(masks, s) for s in range(len(masks))]
    if all(r == 0 for r in ratios):
        return []
    order = sorted(range(len(masks)), key=lambda s: (-ratios[s], s))
    return order[:2]


def _feasible_shifts(bits: np.ndarray):
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    P = bits.shape[0]
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    for dy in range(0, P - r1):
        for dx in range(-c0, P - 1 - c1 + 1):
            yield dy, dx


def translate_mask(mask: BinaryGrid, shift: Shift) -> BinaryGrid:
    """Shift all set bits by (dy, dx); bits must stay in-grid."""
    bits = mask.bits
    P = bits.shape[0]
    out = np.zeros_like(bits)
    ys, xs = np.nonzero(bits)
    ys2, xs2 = ys + shift.dy, xs + shift.dx
    if len(ys2) and (ys2.min() < 0 or ys2.max() >= P or xs2.min() < 0 or xs2.max() >= P):
        raise ValueError(f"shift {shift} moves mask out of grid")
    out[ys2, xs2] = True
    return BinaryGrid(out)


def search_shift(mask: BinaryGrid, others: list[BinaryGrid]) -> Shift:
    """Exhaustive scan over in-grid, non-upward shifts minimizing the total
    overlap with the other masks. Ties prefer the smallest displacement
    (|dy|+|dx|, then dy, then dx)."""
    if mask.area() == 0:
        raise DegenerateMapError("cannot shift an empty mask")
    other_stack = np.stack([o.bits for o in others]) if others else None
    best: tuple[int, int, int, int] | None = None
    best_shift = Shift(0, 0)
    for dy, dx in _feasible_shifts(mask.bits):
        if other_stack is None:
            overlap = 0
        else:
            shifted = translate_mask(mask, Shift(dy, dx)).bits
            overlap = int((other_stack & shifted).sum())
        key = (overlap, abs(dy) + abs(dx), dy, dx)
        if best is None or key < best:
            best = key
            best_shift = Shift(dy, dx)
    return best_shift


def total_pairwise_overlap(masks: list[BinaryGrid]) -> int:
    return sum(
        masks[i].intersection_area(masks[j])
        for i in range(len(masks))
        for j in range(i + 1, len(masks))
    )


def plan_layout(A_tau: AttentionMaps, S: SubjectSet, gcfg: GammaConfig) -> LayoutPlan:
    """Threshold per-subject masks with adapted gamma, pick the two worst
    overlappers, and shift them greedily (second search sees the first
    mover's new position)."""
    S.validate_against(A_tau)
    n = len(S)
    initial: dict[int, BinaryGrid] = {}
    for s in S.tokens:
        gamma = adapt_gamma(A_tau.token_map(s), gcfg, n)
        initial[s] = threshold_mask(A_tau.token_map(s), gamma)

    mask_list = [initial[s] for s in S.tokens]
    overlap_before = total_pairwise_overlap(mask_list)
    final = dict(initial)
    movers: list[tuple[int, Shift]] = []

    mover_idx = select_movers(mask_list)
    if mover_idx:
        # application order: descending ratio (select_movers output order)
        for idx in mover_idx:
            s = S.tokens[idx]
            others = [final[s2] for s2 in S.tokens if s2 != s]
            shift = search_shift(final[s], others)
            final[s] = translate_mask(final[s], shift)
            movers.append((s, shift))

    overlap_after = total_pairwise_overlap([final[s] for s in S.tokens])
    return LayoutPlan(
        subjects=S.tokens,
        initial_masks=initial,
        final_masks=final,
        movers=tuple(movers),
        overlap_before=overlap_before,
        overlap_after=overlap_after,
    )


def upscale_mask(mask: BinaryGrid, factor: int = UPSCALE) -> BinaryGrid:
    """Nearest-neighbor expansion: each bit becomes a factor x factor block."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return BinaryGrid(np.kron(mask.bits, np.ones((factor, factor), dtype=bool)))


def _background_source_cells(A_tau: AttentionMaps, s_bkg: int, k: int) -> list[tuple[int, int]]:
    """Latent anchor cells for the top-k background-attention patches,
    descending by attention, ties row-major."""
    bg = A_tau.token_map(s_bkg)
    flat = bg.ravel()
    order = sorted(range(flat.size), key=lambda i: (-flat[i], i))[:k]
    P = A_tau.P
    return [(UPSCALE * (i // P), UPSCALE * (i % P)) for i in order]


def migrate_latent(
    z: LatentGrid, plan: LayoutPlan, A_tau: AttentionMaps, icfg: ImputationConfig,
    S: SubjectSet | None = None,
) -> LatentGrid:
    """Copy mover latent blocks to their shifted destinations and refill
    vacated cells per the imputation mode. Untouched cells pass through
    bit-exactly."""
    z.check_matches(A_tau, UPSCALE)
    old = z.data
    new = old.copy()
    H = z.H

    src_union = np.zeros((H, H), dtype=bool)
    dst_union = np.zeros((H, H), dtype=bool)
    for s, shift in plan.movers:
        src = upscale_mask(plan.initial_masks[s]).bits
        lat_shift = Shift(UPSCALE * shift.dy, UPSCALE * shift.dx)
        ys, xs = np.nonzero(src)
        yd, xd = ys + lat_shift.dy, xs + lat_shift.dx
        if len(yd) and (yd.max() >= H or xd.max() >= H or xd.min() < 0):
            raise DimensionError(f"mover {s} shift {shift} leaves the latent grid")
        new[:, yd, xd] = old[:, ys, xs]
        src_union[ys, xs] = True
        dst_union[yd, xd] = True

    vacated = src_union & ~dst_union
    ys, xs = np.nonzero(vacated)  # row-major order
    if len(ys):
        if icfg.mode == "random-normal":
            rng = np.random.default_rng(icfg.seed)
            new[:, ys, xs] = rng.standard_normal((z.C, len(ys)))
        else:
            if S is None or S.background is None:
                raise ConfigError("background-copy imputation requires a background token")
            cells = _background_source_cells(A_tau, S.background, icfg.k)
            for m in range(len(ys)):
                sy, sx = cells[m % len(cells)]
                new[:, ys[m], xs[m]] = old[:, sy, sx]
    return LatentGrid(new)
