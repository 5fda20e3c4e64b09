"""Two-phase training: the clean-speech FAE, then the mixture DAE.

One Adam step is taken per batch. Every random draw (initialisation,
segment offsets, latent noise) comes from streams spawned off the config
seed, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .dsp import BANK_WINDOWS, aligned_bank
from .errors import ConfigError, DataError, NumericsError, StateError
from .losses import LossReport, LossWeights
from .model import Autoencoder, init_dae, init_fae
from .tensor import AdamState, GradientTape, Tensor

log = logging.getLogger(__name__)

DESK_SCALE = 1.0 / 8.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 20
    fae_epochs: int = 700
    dae_epochs: int = 1500
    weights: LossWeights = LossWeights()
    seed: int = 0
    scale_preset: str = "full"
    multi_resolution: bool = True
    phase_aware: bool = True
    ccc: bool = True
    segment_length: int = 2048
    per_element: bool = False
    clip_norm: float = 5.0
    checkpoint_every: int = 50
    init_dae_decoders: bool = True
    latent_align: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    slope: float = 0.2

    def __post_init__(self):
        if self.fae_epochs < 0 or self.dae_epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be non-negative and batch positive")
        if self.ccc and not self.phase_aware:
            raise ConfigError("the complex-cycle module needs phase-aware decoders")
        if self.scale_preset not in ("full", "desk"):
            raise ConfigError(f"unknown scale preset {self.scale_preset!r}")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.segment_length < max(BANK_WINDOWS):
            raise ConfigError(f"segments need at least {max(BANK_WINDOWS)} samples")

    @property
    def windows(self) -> tuple[int, ...]:
        return BANK_WINDOWS if self.multi_resolution else BANK_WINDOWS[:1]

    @property
    def scale(self) -> float:
        return DESK_SCALE if self.scale_preset == "desk" else 1.0

    def model_config(self) -> M.ModelConfig:
        return M.fae_config(self.scale, windows=self.windows, phase_aware=self.phase_aware, slope=self.slope)

    def dae_model_config(self) -> M.ModelConfig:
        return self.model_config().for_encoder(M.dae_encoder_schedule(self.scale))

    def toggles(self) -> tuple[bool, bool, bool]:
        return self.multi_resolution, self.phase_aware, self.ccc


def desk_config(**overrides) -> TrainConfig:
    base = dict(scale_preset="desk", fae_epochs=120, dae_epochs=30, checkpoint_every=50)
    base.update(overrides)
    return TrainConfig(**base)


# features -------------------------------------------------------------------

def stack_banks(banks: Sequence[list]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.stack([b[i][0] for b in banks]), np.stack([b[i][1] for b in banks]))
            for i in range(len(banks[0]))]


def segment(signal: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.size <= length:
        return np.pad(x, (0, length - x.size))
    start = int(rng.integers(0, x.size - length + 1))
    return x[start:start + length]


# complex-cycle-consistent step ------------------------------------------------

@dataclass
class CCCState:
    """Backward-cycle banks from the most recent epoch (None before epoch 2)."""

    bc_phase: list[np.ndarray] | None = None
    bc_amplitude: list[np.ndarray] | None = None
    epoch: int = 0


@dataclass
class CCCResult:
    amplitude: Tensor      # combined amplitude loss
    phase: Tensor          # combined phase loss
    base_amplitude: Tensor
    base_phase: Tensor
    bc_phase: Tensor | None = None
    bc_amplitude: Tensor | None = None


def ccc_step(net: Autoencoder, target_amp: list[Tensor], target_phase: list[Tensor],
             recon_amp: list[Tensor], recon_phase: list[Tensor], state: CCCState,
             theta1: float, epoch: int, per_element: bool = False,
             require_bc: bool = False) -> tuple[CCCResult, CCCState]:
    """Combine base losses with the amplitude<->phase backward cycles.

    Epoch 1 only evaluates the base amplitude and phase losses. From epoch
    2 on, the phase is re-estimated from a bank whose amplitudes are the
    current reconstructions, then the amplitude is re-estimated from a bank
    whose phases are that renewed estimate.
    """
    base_a = L.amplitude_loss(target_amp, recon_amp, per_element)
    base_p = L.phase_loss(target_phase, recon_phase, per_element)
    if epoch < 2:
        if require_bc:
            raise StateError("backward-cycle terms are undefined before epoch 2")
        return CCCResult(base_a, base_p, base_a, base_p), replace(state, epoch=epoch)

    a2p_latent = net.encode(list(zip(recon_amp, target_phase))).mean
    s_a2p = net.decode_phase(a2p_latent)
    j_a2p = L.bc_phase_loss(target_phase, s_a2p, per_element)
    phase = L.combined_phase_loss(base_p, j_a2p, theta1)

    p2a_latent = net.encode(list(zip(target_amp, s_a2p))).mean
    s_p2a = net.decode_amplitude(p2a_latent)
    j_p2a = L.bc_amplitude_loss(target_amp, s_p2a, per_element)
    amplitude = L.combined_amplitude_loss(base_a, j_p2a, theta1)

    new_state = CCCState([t.data for t in s_a2p], [t.data for t in s_p2a], epoch)
    return CCCResult(amplitude, phase, base_a, base_p, j_a2p, j_p2a), new_state


# forward passes ---------------------------------------------------------------

def _bank_tensors(bank_np, phase_aware: bool):
    amps = [Tensor(a) for a, _ in bank_np]
    phases = [Tensor(p) for _, p in bank_np] if phase_aware else None
    return amps, phases


def _pairs(amps, phases):
    return list(zip(amps, phases if phases is not None else [None] * len(amps)))


def fae_objective(net: Autoencoder, bank_np, noise: np.ndarray, cfg: TrainConfig,
                  epoch: int, state: CCCState) -> tuple[Tensor, LossReport, CCCState]:
    """Total FAE objective for one batch, recorded on the active tape."""
    w = cfg.weights
    amps, phases = _bank_tensors(bank_np, cfg.phase_aware)
    enc = net.encode(_pairs(amps, phases))
    z = M.sample_latent(enc.mean, enc.log_variance, Tensor(noise))
    a_hat = net.decode_amplitude(z)
    report = LossReport()
    if cfg.phase_aware:
        p_hat = net.decode_phase(z)
        if cfg.ccc:
            res, state = ccc_step(net, amps, phases, a_hat, p_hat, state, w.theta1, epoch, cfg.per_element)
        else:
            base_a = L.amplitude_loss(amps, a_hat, cfg.per_element)
            base_p = L.phase_loss(phases, p_hat, cfg.per_element)
            res = CCCResult(base_a, base_p, base_a, base_p)
        j_s = res.amplitude + res.phase
        report.J_Sp = res.base_phase.item()
        report.J_a2p = res.bc_phase.item() if res.bc_phase is not None else 0.0
        report.J_p2a = res.bc_amplitude.item() if res.bc_amplitude is not None else 0.0
        report.J_Sa = res.base_amplitude.item()
    else:
        p_hat = None
        j_s = L.amplitude_loss(amps, a_hat, cfg.per_element)
        report.J_Sa = j_s.item()
    enc_hat = net.encode(_pairs(a_hat, p_hat))
    j_cyc = L.cycle_loss(j_s, enc.layers, enc_hat.layers, w.theta3)
    j_kl = L.kl_loss(enc.mean, enc.log_variance)
    total = L.fae_total(j_kl, j_s, j_cyc, w.theta2)
    report.J_KL = j_kl.item()
    report.J_cyc = j_cyc.item()
    report.J_total = total.item()
    return total, report, state


def dae_objective(net: Autoencoder, bank_np, noise: np.ndarray, cfg: TrainConfig, epoch: int,
                  state: CCCState, fae: Autoencoder | None = None) -> tuple[Tensor, LossReport, CCCState]:
    """KL plus mixture reconstruction (with CCC-M when enabled)."""
    w = cfg.weights
    amps, phases = _bank_tensors(bank_np, cfg.phase_aware)
    enc = net.encode(_pairs(amps, phases))
    z = M.sample_latent(enc.mean, enc.log_variance, Tensor(noise))
    a_hat = net.decode_amplitude(z)
    report = LossReport()
    if cfg.phase_aware:
        p_hat = net.decode_phase(z)
        if cfg.ccc:
            res, state = ccc_step(net, amps, phases, a_hat, p_hat, state, w.theta1, epoch, cfg.per_element)
        else:
            base_a = L.amplitude_loss(amps, a_hat, cfg.per_element)
            base_p = L.phase_loss(phases, p_hat, cfg.per_element)
            res = CCCResult(base_a, base_p, base_a, base_p)
        recon = res.amplitude + res.phase
        report.J_Ma = res.base_amplitude.item()
        report.J_Mp = res.base_phase.item()
        report.J_a2p = res.bc_phase.item() if res.bc_phase is not None else 0.0
        report.J_p2a = res.bc_amplitude.item() if res.bc_amplitude is not None else 0.0
    else:
        recon = L.amplitude_loss(amps, a_hat, cfg.per_element)
        report.J_Ma = recon.item()
    j_kl = L.kl_loss(enc.mean, enc.log_variance)
    total = j_kl * w.theta2 + recon
    if cfg.latent_align > 0 and fae is not None:
        ref = fae.encode(_pairs(amps, phases)).mean
        total = total + L.latent_error([enc.mean], [Tensor(ref.data)]) * cfg.latent_align
    report.J_KL = j_kl.item()
    report.J_total = total.item()
    return total, report, state


# optimisation -------------------------------------------------------------------

def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if not np.isfinite(norm):
        raise NumericsError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


@dataclass
class Phase:
    """Mutable single-writer training state for one autoencoder."""

    net: Autoencoder
    optimizer: AdamState
    ccc: CCCState = field(default_factory=CCCState)
    epoch: int = 0
    history: list[tuple[int, LossReport]] = field(default_factory=list)


def _streams(seed: int, tag: int):
    ss = np.random.SeedSequence([seed, tag])
    init, crop, noise = ss.spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(crop), np.random.default_rng(noise))


def _run_epoch(phase: Phase, signals: Sequence[np.ndarray], cfg: TrainConfig,
               crop_rng, noise_rng, objective: Callable, **kw) -> LossReport:
    phase.epoch += 1
    epoch = phase.epoch
    order = crop_rng.permutation(len(signals))
    windows = phase.net.config.windows
    reports = []
    params = phase.net.params
    for start in range(0, len(order), cfg.batch):
        idx = order[start:start + cfg.batch]
        banks = [aligned_bank(segment(signals[i], cfg.segment_length, crop_rng), windows) for i in idx]
        bank_np = stack_banks(banks)
        n_frames = bank_np[0][0].shape[-1]
        noise = noise_rng.standard_normal((len(idx), phase.net.config.latent_dim, n_frames))
        with GradientTape() as tape:
            total, report, phase.ccc = objective(phase.net, bank_np, noise, cfg, epoch, phase.ccc, **kw)
        if not np.isfinite(report.J_total):
            raise NumericsError(f"non-finite loss at epoch {epoch}: {report.terms()}")
        grads_by_tensor = T.backward(tape, total)
        grads = {name: grads_by_tensor.get(p, np.zeros(p.shape)) for name, p in params.items()}
        clip_gradients(grads, cfg.clip_norm)
        T.adam_step(params, grads, phase.optimizer)
        reports.append(report)
    summary = LossReport.mean_of(reports)
    phase.history.append((epoch, summary))
    return summary


def new_fae_phase(cfg: TrainConfig) -> tuple[Phase, tuple]:
    init_rng, crop_rng, noise_rng = _streams(cfg.seed, 1)
    net = init_fae(cfg.model_config(), init_rng)
    opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    return Phase(net, opt), (crop_rng, noise_rng)


def new_dae_phase(cfg: TrainConfig, fae: Autoencoder) -> tuple[Phase, tuple]:
    if fae is None:
        raise StateError("DAE training needs a trained FAE")
    init_rng, crop_rng, noise_rng = _streams(cfg.seed, 2)
    net = init_dae(cfg.dae_model_config(), init_rng, fae if cfg.init_dae_decoders else None)
    opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    return Phase(net, opt), (crop_rng, noise_rng)


def fae_epoch(phase: Phase, clean: Sequence[np.ndarray], cfg: TrainConfig, rngs) -> LossReport:
    return _run_epoch(phase, clean, cfg, rngs[0], rngs[1], fae_objective)


def dae_epoch(phase: Phase, mixtures: Sequence[np.ndarray], cfg: TrainConfig, rngs,
              fae: Autoencoder) -> LossReport:
    if fae is None:
        raise StateError("DAE training needs a trained FAE")
    before = {k: v.data for k, v in fae.params.items()}
    report = _run_epoch(phase, mixtures, cfg, rngs[0], rngs[1], dae_objective, fae=fae)
    for k, v in fae.params.items():
        if v.data is not before[k]:
            raise StateError(f"FAE parameter {k} changed during DAE training")
    return report


# checkpoints ------------------------------------------------------------------

def manifest_text(net: Autoencoder, cfg: TrainConfig) -> str:
    mc = net.config
    rows = {
        "encoder": net.enc,
        "enc_schedule": ",".join(map(str, mc.enc_schedule)),
        "dec_schedule": ",".join(map(str, mc.dec_schedule)),
        "latent_dim": mc.latent_dim,
        "windows": ",".join(map(str, mc.windows)),
        "phase_aware": int(mc.phase_aware),
        "kernel": mc.kernel,
        "activation": f"leaky_relu({mc.slope})",
        "amplitude_head": "softplus",
        "phase_head": "linear",
        "seed": cfg.seed,
    }
    return "".join(f"{k}={v}\n" for k, v in rows.items())


def save_net(path, net: Autoencoder, cfg: TrainConfig) -> None:
    path = Path(path)
    T.save_checkpoint(path, net.arrays())
    tmp = path.with_name(f".{path.name}.txt.tmp")
    tmp.write_text(manifest_text(net, cfg))
    tmp.replace(path.with_name(path.name + ".txt"))


def read_sidecar(path) -> dict[str, str]:
    side = Path(str(path) + ".txt")
    if not side.exists():
        raise StateError(f"checkpoint manifest {side} is missing")
    out = {}
    for line in side.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_net(path) -> Autoencoder:
    path = Path(path)
    if not path.exists():
        raise StateError(f"checkpoint {path} not found")
    meta = read_sidecar(path)
    ints = lambda s: tuple(int(x) for x in s.split(","))  # noqa: E731
    slope = float(meta["activation"].split("(")[1].rstrip(")"))
    cfg = M.ModelConfig(enc_schedule=ints(meta["enc_schedule"]), dec_schedule=ints(meta["dec_schedule"]),
                        windows=ints(meta["windows"]), phase_aware=bool(int(meta["phase_aware"])),
                        kernel=int(meta["kernel"]), slope=slope)
    arrays = T.load_checkpoint(path)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    enc = meta["encoder"]
    amp, phase = ("D11", "D12") if enc == "E1" else ("D21", "D22")
    return Autoencoder(cfg, params, enc, amp, phase)


# orchestration --------------------------------------------------------------------

@dataclass
class TrainResult:
    fae: Autoencoder
    dae: Autoencoder | None
    fae_history: list[tuple[int, LossReport]]
    dae_history: list[tuple[int, LossReport]]
    checkpoints: list[Path]
    seconds: float


def _checkpointed(phase: Phase, tag: str, cfg: TrainConfig, out: Path | None, saved: list[Path]) -> None:
    if out is not None and cfg.checkpoint_every and phase.epoch % cfg.checkpoint_every == 0:
        p = out / "checkpoints" / f"{tag}-e{phase.epoch:04d}.ckpt"
        save_net(p, phase.net, cfg)
        saved.append(p)


def _finish(phase: Phase, tag: str, cfg: TrainConfig, out: Path | None, saved: list[Path]) -> None:
    if out is not None:
        p = out / f"{tag}.ckpt"
        save_net(p, phase.net, cfg)
        saved.append(p)
        L.write_report_csv(out / f"{tag}_losses.csv", phase.history)


def train_fae(clean: Sequence[np.ndarray], cfg: TrainConfig, out_dir=None,
              progress: Callable[[str, int, LossReport], None] | None = None,
              saved: list[Path] | None = None) -> Phase:
    """All FAE epochs; writes ``fae.ckpt`` and ``fae_losses.csv`` under ``out_dir``."""
    if not clean:
        raise DataError("no clean utterances for the FAE")
    out = Path(out_dir) if out_dir is not None else None
    saved = [] if saved is None else saved
    phase, rngs = new_fae_phase(cfg)
    for _ in range(cfg.fae_epochs):
        rep = fae_epoch(phase, clean, cfg, rngs)
        if progress:
            progress("fae", phase.epoch, rep)
        _checkpointed(phase, "fae", cfg, out, saved)
    _finish(phase, "fae", cfg, out, saved)
    return phase


def train_dae(mixtures: Sequence[np.ndarray], fae: Autoencoder, cfg: TrainConfig, out_dir=None,
              progress: Callable[[str, int, LossReport], None] | None = None,
              saved: list[Path] | None = None) -> Phase:
    """All DAE epochs against a frozen FAE; writes ``dae.ckpt`` and ``dae_losses.csv``."""
    if not mixtures:
        raise DataError("no mixtures for the DAE")
    out = Path(out_dir) if out_dir is not None else None
    saved = [] if saved is None else saved
    phase, rngs = new_dae_phase(cfg, fae)
    for _ in range(cfg.dae_epochs):
        rep = dae_epoch(phase, mixtures, cfg, rngs, fae)
        if progress:
            progress("dae", phase.epoch, rep)
        _checkpointed(phase, "dae", cfg, out, saved)
    _finish(phase, "dae", cfg, out, saved)
    return phase


def train_full(clean: Sequence[np.ndarray], mixtures: Sequence[np.ndarray], cfg: TrainConfig,
               out_dir=None, clean_ids: Sequence[str] = (), mixture_ids: Sequence[str] = (),
               progress: Callable[[str, int, LossReport], None] | None = None) -> TrainResult:
    """Run every FAE epoch, then every DAE epoch, checkpointing as configured."""
    overlap = set(clean_ids) & set(mixture_ids)
    if overlap:
        raise DataError(f"FAE and DAE sets overlap on {sorted(overlap)[:5]}")
    t0 = time.perf_counter()
    saved: list[Path] = []
    fae = train_fae(clean, cfg, out_dir, progress, saved)
    dae = None
    if cfg.dae_epochs and mixtures:
        dae = train_dae(mixtures, fae.net, cfg, out_dir, progress, saved)
    return TrainResult(fae.net, dae.net if dae else None, fae.history,
                       dae.history if dae else [], saved, time.perf_counter() - t0)
