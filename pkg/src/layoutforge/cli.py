"""Command-line surface.

Subcommands operate on a JSON run manifest plus exchange-format tensors:

  loss1      phase-1 loss report (optionally the gradient tensor)
  masks      threshold masks only, with adapted gamma per subject
  rearrange  layout plan, final masks and the migrated latent
  loss3      phase-3 loss report against supplied masks
  guide      full three-phase guidance run from a seeded latent
  gradcheck  finite-difference verification of all gradients

Exit codes: 0 success, 1 usage/manifest error, 2 data error.
Set LAYOUTFORGE_LOG={error|info|debug} to control verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .driver import run_guidance
from .exchange import ExchangeFormatError, read_tensor, write_tensor
from .grids import AttentionMaps, DimensionError, LatentGrid
from .manifest import ManifestError, RunManifest, load_manifest
from .phase2 import DegenerateMapError, adapt_gamma, migrate_latent, plan_layout, threshold_mask
from .phase1 import loss_phase1
from .phase3 import MaskSet, loss_phase3
from .toymodel import ToyAttentionModel, toy_attention

log = logging.getLogger("layoutforge")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class DataError(Exception):
    """Wraps tensor/dimension problems for the exit-code contract."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(path: Path, items: list[tuple[str, object]]) -> str:
    text = "".join(f"{k} = {_fmt(v)}\n" for k, v in items)
    path.write_text(text)
    return text


def _load_attention(m: RunManifest) -> AttentionMaps:
    if m.attention_path is None:
        raise ManifestError("manifest has no inputs.attention")
    try:
        data = read_tensor(m.attention_path)
    except (OSError, ExchangeFormatError) as e:
        raise DataError(str(e)) from None
    if data.ndim != 3:
        raise DataError(f"attention tensor must be rank 3, got rank {data.ndim}")
    try:
        A = AttentionMaps(np.asarray(data, dtype=np.float64))
    except (ValueError, DimensionError) as e:
        raise DataError(str(e)) from None
    m.subjects.validate_against(A)
    return A


def _load_latent(m: RunManifest) -> LatentGrid:
    if m.latent_path is None:
        raise ManifestError("manifest has no inputs.latent")
    try:
        data = read_tensor(m.latent_path)
    except (OSError, ExchangeFormatError) as e:
        raise DataError(str(e)) from None
    if data.ndim != 3:
        raise DataError(f"latent tensor must be rank 3, got rank {data.ndim}")
    return LatentGrid(np.asarray(data, dtype=np.float64))


def cmd_loss1(m: RunManifest, out: Path, emit_grad: bool) -> int:
    A = _load_attention(m)
    total, grad, parts = loss_phase1(A, m.subjects, m.weights)
    items: list[tuple[str, object]] = [
        ("loss_be", parts.loss_be),
        ("loss_ol_total", parts.loss_ol_total),
    ]
    for s in m.subjects.tokens:
        items.append((f"loss_ol_subject_{s}", parts.loss_ol_per_subject[s]))
    for s in m.subjects.tokens:
        items.append((f"loss_norm_subject_{s}", parts.loss_norm_per_subject[s]))
    for s in m.subjects.tokens:
        items.append((f"max_attention_subject_{s}", float(A.token_map(s).max())))
    items.append(("loss_total", total))
    text = write_report(out / "loss1_report.txt", items)
    sys.stdout.write(text)
    if emit_grad:
        write_tensor(out / "loss1_grad.xamt", grad.astype(np.float32))
    return EXIT_OK


def cmd_masks(m: RunManifest, out: Path) -> int:
    A = _load_attention(m)
    items: list[tuple[str, object]] = []
    try:
        for s in m.subjects.tokens:
            gamma = adapt_gamma(A.token_map(s), m.gamma, len(m.subjects))
            mask = threshold_mask(A.token_map(s), gamma)
            write_tensor(out / f"mask_initial_{s}.xamt", mask.bits.astype(np.float32))
            items.append((f"gamma_subject_{s}", gamma))
            items.append((f"area_subject_{s}", mask.area()))
    except DegenerateMapError as e:
        raise DataError(str(e)) from None
    text = write_report(out / "masks_report.txt", items)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rearrange(m: RunManifest, out: Path) -> int:
    A = _load_attention(m)
    z = _load_latent(m)
    try:
        z.check_matches(A)
        plan = plan_layout(A, m.subjects, m.gamma)
        z_new = migrate_latent(z, plan, A, m.imputation, m.subjects)
    except (DimensionError, DegenerateMapError) as e:
        raise DataError(str(e)) from None
    for s in m.subjects.tokens:
        write_tensor(out / f"mask_initial_{s}.xamt", plan.initial_masks[s].bits.astype(np.float32))
        write_tensor(out / f"mask_final_{s}.xamt", plan.final_masks[s].bits.astype(np.float32))
    write_tensor(out / "latent_migrated.xamt", z_new.data.astype(np.float32))
    items: list[tuple[str, object]] = [
        ("overlap_before", plan.overlap_before),
        ("overlap_after", plan.overlap_after),
        ("n_movers", len(plan.movers)),
    ]
    for i, (s, shift) in enumerate(plan.movers):
        items.append((f"mover_{i}_subject", s))
        items.append((f"mover_{i}_dy", shift.dy))
        items.append((f"mover_{i}_dx", shift.dx))
    text = write_report(out / "rearrange_report.txt", items)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_loss3(m: RunManifest, out: Path, emit_grad: bool) -> int:
    A = _load_attention(m)
    if set(m.mask_paths) != set(m.subjects.tokens):
        raise ManifestError("inputs.masks must name one mask file per subject token")
    from .grids import BinaryGrid

    masks = {}
    try:
        for s, p in m.mask_paths.items():
            bits = read_tensor(p)
            masks[s] = BinaryGrid(bits > 0.5)
        M = MaskSet(masks)
        total, grad = loss_phase3(A, m.subjects, M, m.weights)
    except (OSError, ExchangeFormatError, DimensionError, DegenerateMapError) as e:
        raise DataError(str(e)) from None
    from .phase3 import loss_fill, loss_inside

    items = [
        ("loss_inside", loss_inside(A, m.subjects, M)),
        ("loss_fill", loss_fill(A, m.subjects, M)),
        ("loss_total", total),
    ]
    text = write_report(out / "loss3_report.txt", items)
    sys.stdout.write(text)
    if emit_grad:
        write_tensor(out / "loss3_grad.xamt", grad.astype(np.float32))
    return EXIT_OK


def cmd_guide(m: RunManifest, out: Path) -> int:
    P, N = m.P, m.N
    model = ToyAttentionModel.create(N, channels=4, seed=m.seed)
    if m.latent_path is not None:
        z0 = _load_latent(m)
    else:
        rng = np.random.default_rng(m.seed)
        z0 = LatentGrid(rng.standard_normal((4, 4 * P, 4 * P)))
    try:
        z0.check_matches(toy_attention(z0, model))
    except DimensionError as e:
        raise DataError(str(e)) from None
    trace = run_guidance(
        z0, m.subjects, model, m.schedule, m.flags, m.weights, m.gamma, m.imputation
    )
    lines = []
    for rec in trace.records:
        parts = [f"t={rec.t}", f"phase={rec.phase}"]
        if rec.t == trace.rearrange_step and trace.plan is not None:
            parts.append("rearrange=1")
        for k in sorted(rec.losses):
            parts.append(f"{k}={_fmt(rec.losses[k])}")
        for s in m.subjects.tokens:
            parts.append(f"max_attn_{s}={_fmt(rec.max_attention[s])}")
        lines.append(" ".join(parts))
    if trace.plan is not None:
        lines.append(
            f"plan overlap_before={trace.plan.overlap_before} "
            f"overlap_after={trace.plan.overlap_after} "
            f"movers={','.join(str(s) for s, _ in trace.plan.movers) or 'none'}"
        )
    for k in sorted(trace.final_losses):
        lines.append(f"final {k}={_fmt(trace.final_losses[k])}")
    text = "\n".join(lines) + "\n"
    (out / "guide_trace.txt").write_text(text)
    write_tensor(out / "latent_final.xamt", trace.final_latent.data.astype(np.float32))
    if trace.plan is not None:
        for s in m.subjects.tokens:
            write_tensor(
                out / f"mask_final_{s}.xamt", trace.plan.final_masks[s].bits.astype(np.float32)
            )
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(m: RunManifest, out: Path) -> int:
    rng = np.random.default_rng(m.seed)
    P, N = m.P, m.N
    n_sub = len(m.subjects)
    A, S = gc.make_instance(P, N, n_sub, rng, m.weights)
    err1 = gc.check_loss1_gradient(A, S, m.weights, rng, corrupt=m.corrupt_gradient)
    M = gc.random_masks(P, S, rng)
    err3 = gc.check_loss3_gradient(A, S, M, m.weights, rng, corrupt=m.corrupt_gradient)
    model = ToyAttentionModel.create(N, channels=4, seed=m.seed)
    z = LatentGrid(np.random.default_rng(m.seed + 1).standard_normal((4, 4 * P, 4 * P)))
    errc = gc.check_composite_gradient(
        z, S, model, M, m.weights, rng, corrupt=m.corrupt_gradient
    )
    ok = err1 < gc.TOL_LOSS and err3 < gc.TOL_LOSS and errc < gc.TOL_COMPOSITE
    items = [
        ("max_rel_err_loss1", err1),
        ("max_rel_err_loss3", err3),
        ("max_rel_err_composite", errc),
        ("tolerance_losses", gc.TOL_LOSS),
        ("tolerance_composite", gc.TOL_COMPOSITE),
        ("status", "pass" if ok else "fail"),
    ]
    text = write_report(out / "gradcheck_report.txt", items)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layoutforge", description=__doc__)
    parser.add_argument("--version", action="version", version="layoutforge 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("loss1", "masks", "rearrange", "loss3", "guide", "gradcheck"):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True, help="path to the JSON run manifest")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        p.add_argument("--emit-grad", action="store_true", help="also write the gradient tensor")
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("LAYOUTFORGE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR))

    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        manifest = load_manifest(args.manifest)
        if args.seed is not None:
            manifest = dataclasses.replace(manifest, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "loss1":
            return cmd_loss1(manifest, out, args.emit_grad)
        if args.command == "masks":
            return cmd_masks(manifest, out)
        if args.command == "rearrange":
            return cmd_rearrange(manifest, out)
        if args.command == "loss3":
            return cmd_loss3(manifest, out, args.emit_grad)
        if args.command == "guide":
            return cmd_guide(manifest, out)
        if args.command == "gradcheck":
            return cmd_gradcheck(manifest, out)
        parser.error(f"unknown command {args.command}")
    except ManifestError as e:
        log.error("manifest error: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        log.error("data error: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
