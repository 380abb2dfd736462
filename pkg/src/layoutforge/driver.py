"""Guidance driver: runs the three phases over a synthetic reverse
schedule, updating the latent by gradient descent on the phase losses and
recording a full trace."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grids import AttentionMaps, LatentGrid, SubjectSet
from .phase1 import LossWeights, loss_phase1
from .phase2 import GammaConfig, ImputationConfig, LayoutPlan, migrate_latent, plan_layout
from .phase3 import MaskSet, loss_phase3
from .toymodel import ToyAttentionModel, attention_vjp, toy_attention


@dataclass(frozen=True)
class PhaseSchedule:
    """Step counts and latent step size for a guidance run."""

    T: int = 50
    tau: int = 15
    iters_per_step: int = 12
    alpha: float = 25.0

    def __post_init__(self):
        if not 0 < self.tau < self.T:
            raise ValueError("require 0 < tau < T")
        if self.iters_per_step < 1:
            raise ValueError("iters_per_step must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def rearrange_step(self) -> int:
        return self.T - self.tau


@dataclass(frozen=True)
class AblationFlags:
    """Switches for individual loss terms and the rearrangement mechanics."""

    enable_be: bool = True
    enable_ol: bool = True
    enable_norm: bool = True
    enable_inside: bool = True
    enable_fill: bool = True
    enable_pixel_realloc: bool = True
    enable_restart: bool = True

    def phase1_weights(self, w: LossWeights) -> LossWeights:
        return replace(
            w,
            lambda_be=w.lambda_be if self.enable_be else 0.0,
            lambda_ol=w.lambda_ol if self.enable_ol else 0.0,
            lambda_norm=w.lambda_norm if self.enable_norm else 0.0,
        )

    def phase3_weights(self, w: LossWeights) -> LossWeights:
        return replace(
            w,
            lambda_inside=w.lambda_inside if self.enable_inside else 0.0,
            lambda_fill=w.lambda_fill if self.enable_fill else 0.0,
        )


@dataclass(frozen=True)
class StepRecord:
    """Per-step snapshot, evaluated before that step's latent update."""

    t: int
    phase: int  # 1 or 3; the rearrangement fires at the first phase-3 step
    losses: dict[str, float]
    max_attention: dict[int, float]


@dataclass(frozen=True)
class GuidanceTrace:
    """Complete run record: T step snapshots, the layout plan (when the
    rearrangement executed), the final latent and final loss values."""

    records: tuple[StepRecord, ...]
    plan: LayoutPlan | None
    final_latent: LatentGrid
    final_losses: dict[str, float]
    rearrange_step: int
    latent_pre_migration: LatentGrid | None = None
    latent_post_migration: LatentGrid | None = None


def _channel_moments(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return z.mean(axis=(1, 2)), z.std(axis=(1, 2))


def restandardize_channels(
    z: LatentGrid, target_mean: np.ndarray, target_std: np.ndarray
) -> LatentGrid:
    """Affine-map each channel back to the given per-channel moments."""
    data = z.data.copy()
    mean, std = _channel_moments(data)
    for c in range(z.C):
        if std[c] > 0:
            data[c] = (data[c] - mean[c]) / std[c] * target_std[c] + target_mean[c]
        else:
            data[c] = data[c] - mean[c] + target_mean[c]
    return LatentGrid(data)


def run_guidance(
    z_T: LatentGrid,
    S: SubjectSet,
    model: ToyAttentionModel,
    sched: PhaseSchedule = PhaseSchedule(),
    flags: AblationFlags = AblationFlags(),
    w: LossWeights = LossWeights(),
    gcfg: GammaConfig = GammaConfig(),
    icfg: ImputationConfig = ImputationConfig(),
) -> GuidanceTrace:
    """Run the full three-phase guidance loop and return its trace.

    Steps count down from T. The first tau steps descend on the phase-1
    loss; at t = T - tau the layout is planned once (latent migration and
    moment restart per flags); the remaining steps descend on the phase-3
    loss against the fixed final masks.
    """
    z = z_T
    w1 = flags.phase1_weights(w)
    w3 = flags.phase3_weights(w)
    records: list[StepRecord] = []
    plan: LayoutPlan | None = None
    mask_set: MaskSet | None = None

    def snapshot(A: AttentionMaps) -> dict[int, float]:
        return {s: float(A.token_map(s).max()) for s in S.tokens}

    for t in range(sched.T, sched.rearrange_step, -1):
        A = toy_attention(z, model)
        losses = None
        for _ in range(sched.iters_per_step):
            total, grad_A, parts = loss_phase1(A, S, w1)
            if losses is None:
                losses = {
                    "loss1": total,
                    "loss_be": parts.loss_be,
                    "loss_ol_total": parts.loss_ol_total,
                    "loss_norm_total": sum(parts.loss_norm_per_subject.values()),
                }
                max_attn = snapshot(A)
            grad_z = attention_vjp(z, model, A, grad_A)
            z = LatentGrid(z.data - sched.alpha * grad_z)
            A = toy_attention(z, model)
        records.append(StepRecord(t=t, phase=1, losses=losses, max_attention=max_attn))

    # one-shot rearrangement at t = T - tau
    A_tau = toy_attention(z, model)
    plan = plan_layout(A_tau, S, gcfg)
    latent_pre = z
    if flags.enable_pixel_realloc:
        pre_mean, pre_std = _channel_moments(z.data)
        z = migrate_latent(z, plan, A_tau, icfg, S)
        if flags.enable_restart:
            z = restandardize_channels(z, pre_mean, pre_std)
    latent_post = z
    mask_set = MaskSet({s: plan.final_masks[s] for s in S.tokens})

    for t in range(sched.rearrange_step, 0, -1):
        A = toy_attention(z, model)
        losses = None
        for _ in range(sched.iters_per_step):
            total, grad_A = loss_phase3(A, S, mask_set, w3)
            if losses is None:
                losses = {"loss3": total}
                max_attn = snapshot(A)
            grad_z = attention_vjp(z, model, A, grad_A)
            z = LatentGrid(z.data - sched.alpha * grad_z)
            A = toy_attention(z, model)
        records.append(StepRecord(t=t, phase=3, losses=losses, max_attention=max_attn))

    final_A = toy_attention(z, model)
    final3, _ = loss_phase3(final_A, S, mask_set, w3)
    final1, _, _ = loss_phase1(final_A, S, w1)
    return GuidanceTrace(
        records=tuple(records),
        plan=plan,
        final_latent=z,
        final_losses={"loss1": final1, "loss3": final3},
        rearrange_step=sched.rearrange_step,
        latent_pre_migration=latent_pre,
        latent_post_migration=latent_post,
    )
