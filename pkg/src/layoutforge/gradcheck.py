"""Finite-difference verification of the analytic gradients.

The checks here are deliberately independent of the analytic code paths:
they only call the loss functions as black boxes and compare central
differences against the returned gradients. Shared by the test suite and
the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import AttentionMaps, LatentGrid, SubjectSet
from .phase1 import LossWeights, loss_phase1, loss_phase1_value
from .phase2 import DegenerateMapError
from .phase3 import MaskSet, loss_phase3
from .toymodel import ToyAttentionModel, attention_vjp, toy_attention

EPS_LOSS = 1e-4
TOL_LOSS = 1e-4
TOL_COMPOSITE = 1e-3
GAP_MIN = 5e-4  # minimum top-2 gap accepted for any max operator


def _bump_map(P: int, rng: np.random.Generator, n_bumps: int = 3) -> np.ndarray:
    """Positive peaked map whose cell values are pairwise separated.

    A few Gaussian bumps fix the spatial ordering; the values are then
    re-spaced evenly along that ordering, so every max operator sees a
    top-2 gap of at least the spacing and finite differences never cross
    a tie.
    """
    yy, xx = np.mgrid[0:P, 0:P].astype(np.float64)
    a = rng.uniform(0, 1e-6, size=(P, P))  # breaks exact bump symmetries
    for _ in range(n_bumps):
        cy, cx = rng.uniform(0, P - 1, size=2)
        sigma = rng.uniform(1.2, 2.5)
        amp = rng.uniform(0.3, 1.0)
        a += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    base = rng.uniform(0.05, 0.2)
    top = rng.uniform(0.55, 0.9)
    order = np.argsort(a.ravel(), kind="stable")
    out = np.empty(a.size)
    out[order] = np.linspace(base, top, a.size)
    return out.reshape(P, P)


def _window_top2_gap(a: np.ndarray) -> float:
    """Smallest gap between the two largest cells of any 3x3 window."""
    P, Q = a.shape
    gap = np.inf
    for i in range(P):
        y0, y1 = max(i - 1, 0), min(i + 2, P)
        for j in range(Q):
            win = np.sort(a[y0:y1, max(j - 1, 0) : min(j + 2, Q)].ravel())
            gap = min(gap, win[-1] - win[-2])
    return gap


def _top2_gap(a: np.ndarray) -> float:
    flat = np.sort(np.asarray(a).ravel())
    return float(flat[-1] - flat[-2])


def _instance_is_clean(A: AttentionMaps, S: SubjectSet, w: LossWeights) -> bool:
    """Reject instances whose max operators have near-ties anywhere a
    finite-difference probe could flip them."""
    maxes = sorted(float(A.token_map(s).max()) for s in S.tokens)
    if any(b - a < GAP_MIN for a, b in zip(maxes, maxes[1:])):
        return False
    for s in S.tokens:
        a = A.token_map(s)
        if _top2_gap(a) < GAP_MIN or _window_top2_gap(a) < GAP_MIN:
            return False
    # filtered maps used by the blocking sequence and the outer max
    from .phase1 import build_blocking_sequence

    seq = build_blocking_sequence(A, S, w)
    deficits = []
    for i, s in enumerate(seq.order):
        filtered = A.token_map(s) * (~seq.mask_before(i).bits)
        if _top2_gap(filtered) < GAP_MIN:
            return False
        deficits.append(1.0 - float(filtered.max()))
    deficits.sort()
    if any(b - a < GAP_MIN for a, b in zip(deficits, deficits[1:])):
        return False
    return True


def make_instance(
    P: int, N: int, n_subjects: int, rng: np.random.Generator, w: LossWeights | None = None,
    max_tries: int = 200,
) -> tuple[AttentionMaps, SubjectSet]:
    """Random smooth attention instance, rejection-sampled away from ties."""
    w = w or LossWeights()
    S = SubjectSet(tokens=tuple(range(n_subjects)))
    for _ in range(max_tries):
        data = np.stack([_bump_map(P, rng) for _ in range(N)], axis=2)
        A = AttentionMaps(data)
        if _instance_is_clean(A, S, w):
            return A, S
    raise RuntimeError("could not sample a tie-free instance")


def central_difference(f, x: np.ndarray, flat_indices: np.ndarray, eps: float) -> np.ndarray:
    """Central finite differences of scalar f at the given flat indices."""
    out = np.empty(len(flat_indices))
    work = x.copy()
    flat = work.ravel()
    for i, idx in enumerate(flat_indices):
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = f(work)
        flat[idx] = orig - eps
        fm = f(work)
        flat[idx] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out


def max_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Elementwise relative error with a scale floor tied to the gradient
    magnitude, so exact zeros on both sides compare clean."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-3 * scale)
    return float(np.max(np.abs(analytic - fd) / denom))


def _probe_indices(shape: tuple, rng: np.random.Generator, count: int) -> np.ndarray:
    total = int(np.prod(shape))
    count = min(count, total)
    return rng.choice(total, size=count, replace=False)


def check_loss1_gradient(
    A: AttentionMaps, S: SubjectSet, w: LossWeights, rng: np.random.Generator,
    n_probes: int = 150, eps: float = EPS_LOSS, corrupt: bool = False,
) -> float:
    """Max relative error of the phase-1 gradient vs central differences."""
    _, grad, _ = loss_phase1(A, S, w)
    if corrupt:
        grad = grad * 1.01 + 1e-3
    idx = _probe_indices(grad.shape, rng, n_probes)

    def f(x):
        return loss_phase1_value(AttentionMaps(x), S, w)

    fd = central_difference(f, A.data, idx, eps)
    return max_relative_error(grad.ravel()[idx], fd)


def check_loss3_gradient(
    A: AttentionMaps, S: SubjectSet, M: MaskSet, w: LossWeights, rng: np.random.Generator,
    n_probes: int = 150, eps: float = EPS_LOSS, corrupt: bool = False,
) -> float:
    """Max relative error of the phase-3 gradient vs central differences."""
    _, grad = loss_phase3(A, S, M, w)
    if corrupt:
        grad = grad * 1.01 + 1e-3
    idx = _probe_indices(grad.shape, rng, n_probes)

    def f(x):
        total, _ = loss_phase3(AttentionMaps(x), S, M, w)
        return total

    fd = central_difference(f, A.data, idx, eps)
    return max_relative_error(grad.ravel()[idx], fd)


def check_composite_gradient(
    z: LatentGrid, S: SubjectSet, model: ToyAttentionModel, M: MaskSet, w: LossWeights,
    rng: np.random.Generator, n_probes: int = 80, eps: float = 1e-5, corrupt: bool = False,
) -> float:
    """Max relative error of d(loss3)/dz chained through the toy model."""
    A = toy_attention(z, model)
    _, grad_A = loss_phase3(A, S, M, w)
    grad_z = attention_vjp(z, model, A, grad_A)
    if corrupt:
        grad_z = grad_z * 1.01 + 1e-3
    idx = _probe_indices(grad_z.shape, rng, n_probes)

    def f(x):
        total, _ = loss_phase3(toy_attention(LatentGrid(x), model), S, M, w)
        return total

    fd = central_difference(f, z.data, idx, eps)
    return max_relative_error(grad_z.ravel()[idx], fd)


def random_masks(P: int, S: SubjectSet, rng: np.random.Generator) -> MaskSet:
    """Random nonempty rectangular mask per subject."""
    from .grids import BinaryGrid

    masks = {}
    for s in S.tokens:
        h, w_ = rng.integers(2, max(3, P // 2), size=2)
        y = int(rng.integers(0, P - h + 1))
        x = int(rng.integers(0, P - w_ + 1))
        bits = np.zeros((P, P), dtype=bool)
        bits[y : y + h, x : x + w_] = True
        masks[s] = BinaryGrid(bits)
    return MaskSet(masks)
