"""Subprocess session around the layoutforge CLI.

The bridge never computes guidance math itself: every number comes back from
the CLI via report files and exchange tensors. Integration is purely at the
process boundary (manifest JSON in, ``key = value`` reports and .xamt files
out), so the adapter ports to any host pipeline that can shell out.

One session per working directory; concurrent sessions must use distinct
directories.
"""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .exchange import export_tensor, import_tensor


class BridgeEnvironmentError(RuntimeError):
    """The CLI binary is missing or does not answer the version probe."""


class BridgeError(RuntimeError):
    """A CLI invocation failed; carries the exit code and stderr message."""

    def __init__(self, exit_code: int, message: str):
        super().__init__(f"CLI exited {exit_code}: {message}")
        self.exit_code = exit_code
        self.message = message


@dataclass(frozen=True)
class StepConfig:
    """Host-side settings for one guided step."""

    subjects: tuple[int, ...]
    background: int | None = None
    seed: int = 0
    gamma: dict = field(default_factory=dict)
    imputation: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepResult:
    """Outputs of one guided step, parsed from the CLI's files."""

    latent: np.ndarray
    masks: dict[int, np.ndarray]
    report: dict[str, object]
    report_text: str


def parse_report(text: str) -> dict[str, object]:
    """Parse ``key = value`` lines, keeping ints/floats typed."""
    out: dict[str, object] = {}
    for line in text.splitlines():
        key, _, value = line.partition(" = ")
        value = value.strip()
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


class BridgeSession:
    """File-based adapter binding a working directory to the CLI.

    The constructor probes the CLI with ``--version`` so misconfiguration
    fails fast rather than mid-pipeline.
    """

    def __init__(
        self,
        workdir: str | Path,
        cli: tuple[str, ...] | None = None,
        manifest_template: dict | None = None,
    ):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        if cli is None:
            found = shutil.which("layoutforge")
            if found is None:
                raise BridgeEnvironmentError("layoutforge CLI not found on PATH")
            cli = (found,)
        self.cli = tuple(cli)
        self.manifest_template = dict(manifest_template or {})
        self.callbacks: list[Callable[[StepResult], None]] = []
        try:
            probe = subprocess.run(
                [*self.cli, "--version"], capture_output=True, text=True, timeout=30
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise BridgeEnvironmentError(f"cannot run {self.cli}: {e}") from None
        if probe.returncode != 0:
            raise BridgeEnvironmentError(
                f"{self.cli} failed the version probe: {probe.stderr.strip()}"
            )
        self.cli_version = probe.stdout.strip()

    def register_callback(self, fn: Callable[[StepResult], None]) -> None:
        """Call fn with each StepResult after every guided step."""
        self.callbacks.append(fn)

    def run_cli(self, command: str, manifest: Path, out: Path) -> None:
        """Invoke one CLI subcommand; raise BridgeError on nonzero exit."""
        proc = subprocess.run(
            [*self.cli, command, "--manifest", str(manifest), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise BridgeError(proc.returncode, proc.stderr.strip() or proc.stdout.strip())

    def write_manifest(self, name: str, doc: dict) -> Path:
        merged = {**self.manifest_template, **doc}
        path = self.workdir / name
        path.write_text(json.dumps(merged, indent=2) + "\n")
        return path

    def guided_step(
        self, attention: np.ndarray, latent: np.ndarray, config: StepConfig
    ) -> StepResult:
        """Serialize one attention/latent snapshot, run the rearrangement,
        and read back the migrated latent, final masks and report."""
        attention = np.asarray(attention)
        latent = np.asarray(latent)
        if attention.ndim != 3 or latent.ndim != 3:
            raise ValueError("attention and latent must be rank-3 arrays")
        if latent.shape[1:] != (4 * attention.shape[0], 4 * attention.shape[1]):
            raise ValueError(
                f"latent side {latent.shape[1:]} must be 4x the attention side "
                f"{attention.shape[:2]}"
            )
        export_tensor(attention, self.workdir / "attention.xamt")
        export_tensor(latent, self.workdir / "latent.xamt")
        manifest = self.write_manifest(
            "step_manifest.json",
            {
                "subjects": list(config.subjects),
                "background": config.background,
                "P": attention.shape[0],
                "N": attention.shape[2],
                "seed": config.seed,
                "gamma": config.gamma,
                "imputation": config.imputation,
                "weights": config.weights,
                "inputs": {"attention": "attention.xamt", "latent": "latent.xamt"},
            },
        )
        out = self.workdir / "step_out"
        out.mkdir(exist_ok=True)
        self.run_cli("rearrange", manifest, out)

        report_text = (out / "rearrange_report.txt").read_text()
        result = StepResult(
            latent=import_tensor(out / "latent_migrated.xamt"),
            masks={
                s: import_tensor(out / f"mask_final_{s}.xamt") for s in config.subjects
            },
            report=parse_report(report_text),
            report_text=report_text,
        )
        for fn in self.callbacks:
            fn(result)
        return result
