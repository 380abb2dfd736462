#!/usr/bin/env python3
"""Regenerate the committed test fixtures and golden reports.

Run from the repo root:  python3 scripts/make_fixtures.py
Golden files are produced by the library itself once its numerics have
been validated; the tests then pin the outputs byte-for-byte.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from layoutforge.exchange import write_tensor  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "tests" / "fixtures"


def bump(P, cy, cx, sigma, amp=1.0):
    yy, xx = np.mgrid[0:P, 0:P].astype(float)
    return amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def main():
    FIX.mkdir(parents=True, exist_ok=True)

    # single-subject attention with max exactly 0.8 (loss_be = 0.2)
    a = np.full((8, 8, 2), 0.01, dtype=np.float32)
    a[:, :, 0] += bump(8, 3, 4, 1.5, 0.79).astype(np.float32)
    a[3, 4, 0] = 0.8
    a[:, :, 1] += bump(8, 6, 1, 1.5, 0.5).astype(np.float32)
    write_tensor(FIX / "attention_single.xamt", a)
    (FIX / "manifest_single.json").write_text(json.dumps({
        "subjects": [0],
        "P": 8, "N": 2,
        "seed": 0,
        "inputs": {"attention": "attention_single.xamt"},
    }, indent=2) + "\n")

    # random attention for the byte-for-byte loss1 golden
    rng = np.random.default_rng(42)
    rand_a = rng.random((16, 16, 6)).astype(np.float32)
    write_tensor(FIX / "attention_random.xamt", rand_a)
    (FIX / "manifest_random.json").write_text(json.dumps({
        "subjects": [0, 2, 4],
        "P": 16, "N": 6,
        "seed": 7,
        "inputs": {"attention": "attention_random.xamt"},
    }, indent=2) + "\n")

    # overlapping two-subject layout plus a latent, for rearrange tests
    P = 16
    over = np.stack([
        bump(P, 4, 7, 2.0) + 1e-4,
        bump(P, 4, 8, 2.0) + 1e-4,
        bump(P, 12, 3, 1.5) + 1e-4,
    ], axis=2).astype(np.float32)
    write_tensor(FIX / "attention_overlap.xamt", over)
    z = np.random.default_rng(3).standard_normal((4, 4 * P, 4 * P)).astype(np.float32)
    write_tensor(FIX / "latent_overlap.xamt", z)
    (FIX / "manifest_overlap.json").write_text(json.dumps({
        "subjects": [0, 1, 2],
        "P": 16, "N": 3,
        "seed": 11,
        "inputs": {
            "attention": "attention_overlap.xamt",
            "latent": "latent_overlap.xamt",
        },
    }, indent=2) + "\n")

    # disjoint layout: rearrange must be the identity
    disj = np.stack([
        bump(P, 3, 3, 1.2) + 1e-4,
        bump(P, 3, 12, 1.2) + 1e-4,
        bump(P, 12, 8, 1.2) + 1e-4,
    ], axis=2).astype(np.float32)
    write_tensor(FIX / "attention_disjoint.xamt", disj)
    write_tensor(FIX / "latent_disjoint.xamt", z)
    (FIX / "manifest_disjoint.json").write_text(json.dumps({
        "subjects": [0, 1, 2],
        "P": 16, "N": 3,
        "seed": 11,
        "inputs": {
            "attention": "attention_disjoint.xamt",
            "latent": "latent_disjoint.xamt",
        },
    }, indent=2) + "\n")

    # golden reports, produced by the CLI itself
    import tempfile

    for name, cmd in (("golden_loss1.txt", "loss1"), ("golden_rearrange.txt", "rearrange")):
        manifest = FIX / ("manifest_random.json" if cmd == "loss1" else "manifest_overlap.json")
        with tempfile.TemporaryDirectory() as outdir:
            subprocess.run(
                [sys.executable, "-m", "layoutforge.cli", cmd,
                 "--manifest", str(manifest), "--out", outdir],
                check=True, capture_output=True,
                env={"PYTHONPATH": str(ROOT / "src"), "PATH": "/usr/bin:/bin"},
            )
            report = "loss1_report.txt" if cmd == "loss1" else "rearrange_report.txt"
            (FIX / name).write_bytes((Path(outdir) / report).read_bytes())
            if cmd == "rearrange":
                for s in (0, 1, 2):
                    (FIX / f"golden_mask_final_{s}.xamt").write_bytes(
                        (Path(outdir) / f"mask_final_{s}.xamt").read_bytes()
                    )
                (FIX / "golden_latent_migrated.xamt").write_bytes(
                    (Path(outdir) / "latent_migrated.xamt").read_bytes()
                )
    print("fixtures written to", FIX)


if __name__ == "__main__":
    main()
