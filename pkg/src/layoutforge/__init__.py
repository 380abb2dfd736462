"""Three-phase cross-attention layout guidance on plain tensors."""

from .driver import AblationFlags, GuidanceTrace, PhaseSchedule, StepRecord, run_guidance
from .exchange import ExchangeFormatError, read_tensor, write_tensor
from .grids import (
    AttentionMaps,
    BinaryGrid,
    DimensionError,
    LatentGrid,
    SubjectSet,
    frobenius_inner,
    grayscale_dilate3x3,
    spatial_argmax,
)
from .phase1 import (
    BlockingSequence,
    LossWeights,
    build_blocking_sequence,
    loss_be,
    loss_norm,
    loss_overlap,
    loss_phase1,
    sort_tokens_by_max,
)
from .phase2 import (
    DegenerateMapError,
    GammaConfig,
    ImputationConfig,
    LayoutPlan,
    Shift,
    adapt_gamma,
    migrate_latent,
    mover_ratio,
    plan_layout,
    search_shift,
    select_movers,
    threshold_mask,
    upscale_mask,
)
from .phase3 import MaskSet, loss_fill, loss_inside, loss_phase3
from .toymodel import ToyAttentionModel, attention_vjp, toy_attention

__version__ = "0.1.0"
