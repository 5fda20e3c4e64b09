"""Report figures written to image files (no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dsp import BANK_HOP, stft_array  # noqa: E402
from .losses import LossReport  # noqa: E402
from .metrics import MetricReport  # noqa: E402

LOSS_TERMS = ("J_total", "J_Sa", "J_Sp", "J_Ma", "J_Mp", "J_a2p", "J_p2a", "J_KL")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curves(history: Mapping[int, LossReport] | Sequence[tuple[int, LossReport]], path,
                title: str = "training losses") -> Path:
    """Every nonzero loss term against epoch, log scale."""
    items = sorted(history.items() if isinstance(history, Mapping) else history)
    epochs = [e for e, _ in items]
    fig, ax = plt.subplots(figsize=(7, 4))
    for term in LOSS_TERMS:
        values = np.array([getattr(r, term) for _, r in items])
        if np.any(values > 0):
            ax.plot(epochs, np.where(values > 0, values, np.nan), label=term)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def metric_bars(report: MetricReport, path, metric: str = "sdr_db") -> Path:
    """Enhanced versus input SDR (or another metric) per (snr, noise) cell."""
    agg = report.aggregates()
    labels = [f"{kind}\n{snr:+g} dB" for snr, kind in agg]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(labels)), 4))
    ax.bar(x - 0.2, [a[metric] for a in agg.values()], 0.4, label=f"enhanced {metric}")
    if metric == "sdr_db":
        ax.bar(x + 0.2, [a["input_sdr_db"] for a in agg.values()], 0.4, label="mixture sdr_db")
    ax.set_xticks(x, labels, fontsize=7)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("dB")
    ax.legend(fontsize=8)
    return _save(fig, path)


def ablation_bars(rows: Sequence[tuple[str, float, float]], path) -> Path:
    """Mean SDR with a min-max whisker per ablation setting."""
    names = [r[0] for r in rows]
    means = np.array([r[1] for r in rows])
    spread = np.array([r[2] for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(len(rows)), means, yerr=spread, capsize=3)
    ax.set_xticks(np.arange(len(rows)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mean SDR (dB)")
    return _save(fig, path)


def spectrograms(signals: Mapping[str, np.ndarray], path, window: int = 1024,
                 sample_rate: int = 16000) -> Path:
    """Log-magnitude spectrograms of each named signal, stacked."""
    fig, axes = plt.subplots(len(signals), 1, figsize=(7, 2.2 * len(signals)), squeeze=False)
    for ax, (name, x) in zip(axes[:, 0], signals.items()):
        mag = np.abs(stft_array(np.asarray(x, dtype=np.float64), window, BANK_HOP, window))
        db = 20.0 * np.log10(mag + 1e-10)
        extent = (0, mag.shape[1] * BANK_HOP / sample_rate, 0, sample_rate / 2000)
        ax.imshow(db, origin="lower", aspect="auto", extent=extent, vmin=db.max() - 80, vmax=db.max())
        ax.set_title(name, fontsize=9)
        ax.set_ylabel("kHz")
    axes[-1, 0].set_xlabel("s")
    return _save(fig, path)
