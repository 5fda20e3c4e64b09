"""Reconstruction, backward-cycle, KL and latent-cycle objectives.

Each bank argument is a sequence of planes, one per resolution. Planes are
``(F, N)`` or batched ``(B, F, N)``; batched sums are divided by ``B``.
Scalars may be Tensors (differentiable) or plain floats.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .errors import InputError, NumericsError, ShapeError
from .tensor import Tensor

Scalar = Union[Tensor, float]


@dataclass(frozen=True)
class LossWeights:
    theta1: float = 0.001  # backward-cycle terms
    theta2: float = 0.001  # KL
    theta3: float = 0.001  # latent cycle

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InputError(f"{f.name} must be non-negative")


def _value(x: Scalar) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def _batch(plane: Tensor) -> int:
    return plane.shape[0] if plane.ndim == 3 else 1


def bank_error(targets: Sequence[Tensor], estimates: Sequence[Tensor], per_element: bool = False) -> Tensor:
    """Sum over resolutions of squared L2 distances, averaged over the batch."""
    if len(targets) != len(estimates) or not targets:
        raise ShapeError(f"bank sizes differ: {len(targets)} vs {len(estimates)}")
    total = None
    for t, e in zip(targets, estimates):
        if t.shape != e.shape:
            raise ShapeError(f"plane shapes differ: {t.shape} vs {e.shape}")
        term = T.sq_dist(e, t)
        scale = 1.0 / _batch(t)
        if per_element:
            scale /= t.size // _batch(t)
        term = term * scale
        total = term if total is None else total + term
    return total


def amplitude_loss(targets, estimates, per_element: bool = False) -> Tensor:
    return bank_error(targets, estimates, per_element)


def phase_loss(targets, estimates, per_element: bool = False) -> Tensor:
    return bank_error(targets, estimates, per_element)


def mixture_losses(target_amp, est_amp, target_phase, est_phase, per_element: bool = False):
    """Amplitude and phase reconstruction errors of mixture spectra."""
    return (bank_error(target_amp, est_amp, per_element),
            bank_error(target_phase, est_phase, per_element))


def bc_phase_loss(target_phase, bc_phase, per_element: bool = False) -> Tensor:
    return bank_error(target_phase, bc_phase, per_element)


def bc_amplitude_loss(target_amp, bc_amp, per_element: bool = False) -> Tensor:
    return bank_error(target_amp, bc_amp, per_element)


def _nonneg(*terms: Scalar) -> None:
    for t in terms:
        if _value(t) < 0:
            raise InputError(f"loss terms must be non-negative, got {_value(t)}")


def _combine(base: Scalar, extra: Scalar, weight: float):
    _nonneg(base, extra)
    if weight < 0:
        raise InputError("weight must be non-negative")
    if isinstance(base, Tensor) or isinstance(extra, Tensor):
        return T.as_tensor(base) + T.as_tensor(extra) * weight
    return float(base) + weight * float(extra)


def combined_phase_loss(phase: Scalar, bc_phase: Scalar, theta1: float):
    """Phase loss augmented by the amplitude-to-phase backward cycle."""
    return _combine(phase, bc_phase, theta1)


def combined_amplitude_loss(amplitude: Scalar, bc_amplitude: Scalar, theta1: float):
    """Amplitude loss augmented by the phase-to-amplitude backward cycle."""
    return _combine(amplitude, bc_amplitude, theta1)


def kl_loss(mean: Tensor, log_variance: Tensor) -> Tensor:
    """KL divergence from N(0, 1), summed over channels and frames."""
    if mean.shape != log_variance.shape:
        raise ShapeError(f"mean {mean.shape} vs log-variance {log_variance.shape}")
    if not (np.all(np.isfinite(mean.data)) and np.all(np.isfinite(log_variance.data))):
        raise NumericsError("non-finite latent statistics")
    inner = T.exp(log_variance) + T.square(mean) - log_variance - 1.0
    return T.sum(inner) * (0.5 / _batch(mean))


def spectra_loss(target_amp, est_amp, target_phase, est_phase, per_element: bool = False) -> Tensor:
    return amplitude_loss(target_amp, est_amp, per_element) + phase_loss(target_phase, est_phase, per_element)


def latent_error(z_bank: Sequence[Tensor], z_hat_bank: Sequence[Tensor]) -> Tensor:
    return bank_error(z_bank, z_hat_bank)


def cycle_loss(spectra: Scalar, z_bank: Sequence[Tensor], z_hat_bank: Sequence[Tensor], theta3: float):
    """Spectra loss plus the weighted latent reconstruction error."""
    return _combine(spectra, latent_error(z_bank, z_hat_bank), theta3)


def fae_total(kl: Scalar, spectra: Scalar, cycle: Scalar, theta2: float):
    _nonneg(kl, spectra, cycle)
    if isinstance(kl, Tensor) or isinstance(spectra, Tensor) or isinstance(cycle, Tensor):
        return T.as_tensor(kl) * theta2 + T.as_tensor(spectra) + T.as_tensor(cycle)
    return theta2 * float(kl) + float(spectra) + float(cycle)


@dataclass
class LossReport:
    """Per-step values of every objective term (zero when inactive)."""

    J_Sa: float = 0.0
    J_Sp: float = 0.0
    J_Ma: float = 0.0
    J_Mp: float = 0.0
    J_a2p: float = 0.0
    J_p2a: float = 0.0
    J_KL: float = 0.0
    J_cyc: float = 0.0
    J_total: float = 0.0

    def terms(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def mean_of(cls, reports: Sequence["LossReport"]) -> "LossReport":
        if not reports:
            return cls()
        keys = [f.name for f in fields(cls)]
        return cls(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})


def write_report_csv(path, rows: Sequence[tuple[int, LossReport]]) -> None:
    """Long-format CSV: ``epoch,term,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "term", "value"])
        for epoch, report in rows:
            for name, value in report.terms().items():
                w.writerow([epoch, name, repr(float(value))])


def read_report_csv(path) -> dict[int, LossReport]:
    out: dict[int, dict[str, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["epoch"]), {})[row["term"]] = float(row["value"])
    return {e: LossReport(**terms) for e, terms in out.items()}
