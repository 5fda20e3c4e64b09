"""Waveform and spectral quality metrics, and test-split evaluation reports."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Manifest, load_signal
from .dsp import BANK_HOP, BANK_WINDOWS, stft_array
from .errors import InputError, IoError, ShapeError

CAP_DB = 60.0
LSD_EPS = 1e-10


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(reference, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if s.ndim != 1 or s.shape != e.shape:
        raise ShapeError(f"metric needs equal-length 1-D signals, got {s.shape} and {e.shape}")
    return s, e


def _ratio_db(signal_power: float, residual_power: float) -> float:
    if residual_power <= 0.0:
        return CAP_DB
    if signal_power <= 0.0:
        return -CAP_DB
    return float(np.clip(10.0 * np.log10(signal_power / residual_power), -CAP_DB, CAP_DB))


def sdr(reference, estimate) -> float:
    """Signal-to-distortion ratio in dB, clipped to +-60."""
    s, e = _pair(reference, estimate)
    power = float(np.dot(s, s))
    if power == 0.0:
        raise InputError("reference signal is all zeros")
    r = s - e
    return _ratio_db(power, float(np.dot(r, r)))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR: the estimate is projected onto the reference first."""
    s, e = _pair(reference, estimate)
    power = float(np.dot(s, s))
    if power == 0.0 or not np.any(e):
        raise InputError("si_sdr needs nonzero reference and estimate")
    target = (float(np.dot(e, s)) / power) * s
    r = e - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(r, r)))


def lsd(reference, estimate, window: int = BANK_WINDOWS[0], hop: int = BANK_HOP) -> float:
    """Log-spectral distance in dB at the base STFT geometry."""
    s, e = _pair(reference, estimate)
    if s.size < window:
        raise InputError(f"lsd needs at least {window} samples")
    ref = np.abs(stft_array(s, window, hop, window))
    est = np.abs(stft_array(e, window, hop, window))
    diff = 20.0 * (np.log10(ref + LSD_EPS) - np.log10(est + LSD_EPS))
    per_frame = np.sqrt(np.mean(diff ** 2, axis=0))
    return float(np.sqrt(np.mean(per_frame ** 2)))


@dataclass(frozen=True)
class MetricRow:
    id: str
    snr_db: float
    noise_kind: str
    sdr_db: float
    si_sdr_db: float
    lsd_db: float
    input_sdr_db: float = float("nan")


METRIC_FIELDS = ("sdr_db", "si_sdr_db", "lsd_db", "input_sdr_db")


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    def cells(self) -> dict[tuple[float, str], list[MetricRow]]:
        out: dict[tuple[float, str], list[MetricRow]] = {}
        for r in self.rows:
            out.setdefault((r.snr_db, r.noise_kind), []).append(r)
        return dict(sorted(out.items()))

    def aggregates(self) -> dict[tuple[float, str], dict[str, float]]:
        """Mean of every metric per (snr, noise) cell."""
        return {cell: {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRIC_FIELDS}
                | {"count": len(rows)}
                for cell, rows in self.cells().items()}

    def mean(self, metric: str = "sdr_db", snr_db: float | None = None,
             noise_kind: str | None = None) -> float:
        vals = [getattr(r, metric) for r in self.rows
                if (snr_db is None or r.snr_db == snr_db)
                and (noise_kind is None or r.noise_kind == noise_kind)]
        if not vals:
            raise InputError(f"no rows for snr={snr_db} noise={noise_kind}")
        return float(np.mean(vals))

    def write_csv(self, path) -> None:
        """Aggregate table, one line per cell."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snr_db", "noise_kind", "count", *METRIC_FIELDS])
            for (snr, kind), agg in self.aggregates().items():
                w.writerow([snr, kind, agg["count"], *(repr(agg[k]) for k in METRIC_FIELDS)])

    def write_rows_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(MetricRow.__dataclass_fields__))
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.rows:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def evaluate_pairs(items: Sequence[tuple[str, float, str, np.ndarray, np.ndarray]],
                   enhancer: Callable[[np.ndarray], np.ndarray], workers: int = 1) -> MetricReport:
    """Score ``enhancer`` on ``(id, snr, noise, mixture, clean)`` tuples."""

    def one(item) -> MetricRow:
        uid, snr, kind, mixture, clean = item
        est = enhancer(mixture)
        return MetricRow(uid, float(snr), kind, sdr(clean, est), si_sdr(clean, est),
                         lsd(clean, est), sdr(clean, mixture))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(i) for i in items]
    return MetricReport(rows)


def evaluate_set(manifest: Manifest, enhancer: Callable[[np.ndarray], np.ndarray],
                 workers: int = 1, noise_kind: str | None = None,
                 snrs: Sequence[float] | None = None) -> MetricReport:
    """Enhance every test mixture and score it against its clean source."""
    mixtures = [e for e in manifest.select("test", "mixture")
                if (noise_kind is None or e.noise_kind == noise_kind)
                and (snrs is None or e.snr_db in snrs)]
    if not mixtures:
        raise InputError("test split has no mixtures")
    by_id = manifest.by_id()
    missing = [e.id for e in mixtures if e.source not in by_id]
    missing += [e.id for e in mixtures if not manifest.resolve(e).exists()]
    missing += sorted({e.source for e in mixtures
                       if e.source in by_id and not manifest.resolve(by_id[e.source]).exists()})
    if missing:
        raise IoError(f"missing audio for ids: {', '.join(missing)}")
    items = [(e.id, e.snr_db, e.noise_kind, load_signal(manifest, e), load_signal(manifest, by_id[e.source]))
             for e in mixtures]
    return evaluate_pairs(items, enhancer, workers)


def read_aggregate_csv(path) -> dict[tuple[float, str], dict[str, float]]:
    out = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            out[(float(row["snr_db"]), row["noise_kind"])] = {
                k: float(row[k]) for k in ("count", *METRIC_FIELDS)}
    return out
