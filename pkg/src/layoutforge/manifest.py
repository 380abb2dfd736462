"""Run manifests: one JSON document describing subjects, configs, flags,
the RNG seed and the input tensor paths for a CLI invocation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .driver import AblationFlags, PhaseSchedule
from .grids import SubjectSet
from .phase1 import LossWeights
from .phase2 import GammaConfig, ImputationConfig


class ManifestError(ValueError):
    """Missing, malformed or inconsistent manifest."""


@dataclass(frozen=True)
class RunManifest:
    subjects: SubjectSet
    weights: LossWeights
    schedule: PhaseSchedule
    gamma: GammaConfig
    imputation: ImputationConfig
    flags: AblationFlags
    seed: int
    P: int = 16
    N: int = 8
    attention_path: Path | None = None
    latent_path: Path | None = None
    mask_paths: dict[int, Path] = field(default_factory=dict)
    corrupt_gradient: bool = False  # test hook for the gradcheck command


def _build(cls, payload: dict, what: str):
    try:
        return cls(**payload)
    except TypeError as e:
        raise ManifestError(f"bad {what} section: {e}") from None
    except ValueError as e:
        raise ManifestError(f"bad {what} section: {e}") from None


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ManifestError(f"cannot read manifest: {e}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be an object")

    try:
        tokens = doc["subjects"]
    except KeyError:
        raise ManifestError("manifest missing 'subjects'") from None
    subjects = _build(
        SubjectSet, {"tokens": tuple(tokens), "background": doc.get("background")}, "subjects"
    )

    weights = _build(LossWeights, doc.get("weights", {}), "weights")
    schedule = _build(PhaseSchedule, doc.get("schedule", {}), "schedule")
    gamma = _build(GammaConfig, doc.get("gamma", {}), "gamma")
    imputation = _build(ImputationConfig, doc.get("imputation", {}), "imputation")
    flags = _build(AblationFlags, doc.get("flags", {}), "flags")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ManifestError("'seed' must be an integer")
    P = doc.get("P", 16)
    N = doc.get("N", 8)
    if not (isinstance(P, int) and isinstance(N, int) and P >= 2 and N >= 1):
        raise ManifestError("'P' and 'N' must be integers with P >= 2, N >= 1")
    if any(t >= N for t in subjects.tokens) or (
        subjects.background is not None and subjects.background >= N
    ):
        raise ManifestError("subject/background token indices must be < N")

    inputs = doc.get("inputs", {})
    if not isinstance(inputs, dict):
        raise ManifestError("'inputs' must be an object")

    def resolve(key) -> Path | None:
        p = inputs.get(key)
        if p is None:
            return None
        return (path.parent / p).resolve()

    mask_paths: dict[int, Path] = {}
    for k, p in (inputs.get("masks") or {}).items():
        mask_paths[int(k)] = (path.parent / p).resolve()

    return RunManifest(
        subjects=subjects,
        weights=weights,
        schedule=schedule,
        gamma=gamma,
        imputation=imputation,
        flags=flags,
        seed=seed,
        P=P,
        N=N,
        attention_path=resolve("attention"),
        latent_path=resolve("latent"),
        mask_paths=mask_paths,
        corrupt_gradient=bool(doc.get("corrupt_gradient", False)),
    )
