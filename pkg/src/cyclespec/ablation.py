"""Toggle sweep over multi-resolution, phase-aware and CCC contributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Manifest, load_signals
from .metrics import MetricReport, evaluate_set
from .model import enhance
from .train import TrainConfig, train_dae, train_fae

Toggles = tuple[bool, bool, bool]  # (multi_resolution, phase_aware, ccc)

# every combination except CCC without phase-aware decoders, in table order
ROWS: tuple[Toggles, ...] = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, True, True),
    (True, True, False),
    (True, True, True),
)
FULL: Toggles = (True, True, True)
# the full method minus one contribution (dropping phase also drops CCC)
SINGLE_REMOVALS: tuple[Toggles, ...] = ((False, True, True), (True, False, False), (True, True, False))
TIE_DB = 0.2


def label(t: Toggles) -> str:
    names = [n for n, on in zip(("multires", "phase", "ccc"), t) if on]
    return "+".join(names) or "baseline"


def with_toggles(cfg: TrainConfig, t: Toggles, seed: int) -> TrainConfig:
    return replace(cfg, multi_resolution=t[0], phase_aware=t[1], ccc=t[2], seed=seed)


@dataclass(frozen=True)
class AblationRun:
    toggles: Toggles
    seed: int
    sdr_db: float
    si_sdr_db: float
    lsd_db: float


@dataclass
class AblationResult:
    runs: list[AblationRun]

    def mean_sdr(self, t: Toggles) -> float:
        vals = [r.sdr_db for r in self.runs if r.toggles == t]
        if not vals:
            raise KeyError(label(t))
        return float(np.mean(vals))

    def summary(self) -> list[tuple[Toggles, float, float, int]]:
        """``(toggles, mean sdr, half range, seeds)`` per setting."""
        out = []
        for t in dict.fromkeys(r.toggles for r in self.runs):
            vals = np.array([r.sdr_db for r in self.runs if r.toggles == t])
            out.append((t, float(vals.mean()), float(np.ptp(vals) / 2), len(vals)))
        return out

    def ordering(self, tie_db: float = TIE_DB) -> list[tuple[str, float, float, str]]:
        """Full method against each single-removal variant.

        Status is ``pass`` when the full method is at least as good, ``tie``
        when it trails by no more than ``tie_db``, ``fail`` otherwise.
        """
        full = self.mean_sdr(FULL)
        rows = []
        for t in SINGLE_REMOVALS:
            other = self.mean_sdr(t)
            status = "pass" if full >= other else "tie" if other - full <= tie_db else "fail"
            rows.append((label(t), full, other, status))
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["multi_resolution", "phase_aware", "ccc", "seed", "sdr_db", "si_sdr_db", "lsd_db"])
            for r in self.runs:
                w.writerow([int(r.toggles[0]), int(r.toggles[1]), int(r.toggles[2]), r.seed,
                            repr(r.sdr_db), repr(r.si_sdr_db), repr(r.lsd_db)])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["setting", "multi_resolution", "phase_aware", "ccc", "seeds", "mean_sdr_db", "half_range_db"])
            for t, mean, half, n in self.summary():
                w.writerow([label(t), int(t[0]), int(t[1]), int(t[2]), n, repr(mean), repr(half)])


def run_ablation(manifest: Manifest, base: TrainConfig, seeds: Sequence[int],
                 rows: Sequence[Toggles] = ROWS, out_dir=None, workers: int = 1,
                 progress: Callable[[str], None] | None = None) -> AblationResult:
    """Train and evaluate every setting for every seed on the same corpus."""
    clean = load_signals(manifest, manifest.select("fae", "clean"))
    mixtures = load_signals(manifest, manifest.select("dae", "mixture"))
    runs = []
    for t in rows:
        for seed in seeds:
            cfg = with_toggles(base, t, seed)
            sub = Path(out_dir) / f"{label(t)}-seed{seed}" if out_dir is not None else None
            fae = train_fae(clean, cfg, sub).net
            dae = train_dae(mixtures, fae, cfg, sub).net
            report: MetricReport = evaluate_set(manifest, lambda m: enhance(m, dae, fae), workers)
            if sub is not None:
                report.write_csv(sub / "metrics.csv")
            run = AblationRun(t, seed, report.mean("sdr_db"), report.mean("si_sdr_db"), report.mean("lsd_db"))
            runs.append(run)
            if progress:
                progress(f"{label(t)} seed {seed}: sdr {run.sdr_db:.3f} dB")
    return AblationResult(runs)
