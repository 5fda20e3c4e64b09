"""Convolutional VAEs: one encoder, separate amplitude and phase decoders.

Tensors carry a leading batch axis: ``(B, channels, frames)``. A bank of
spectra is a list of ``(amplitude, phase)`` pairs, one per resolution,
all aligned to the frame grid of the largest window.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import tensor as T
from .dsp import BANK_HOP, BANK_WINDOWS, aligned_bank, istft_array, n_frames, unwrap_phase, wrap_phase
from .errors import InputError, ShapeError, StateError
from .tensor import Tensor

FAE_SCHEDULE = (512, 256, 128, 64)
DAE_SCHEDULE = (512, 400, 300, 200, 100, 64)
KERNEL = 7
SEGMENT_LENGTH = 2048  # training crop, in samples


def scaled(schedule: tuple[int, ...], factor: float) -> tuple[int, ...]:
    return tuple(max(1, int(round(c * factor))) for c in schedule)


@dataclass(frozen=True)
class ModelConfig:
    """Layer schedules and feature layout shared by encoders and decoders."""

    enc_schedule: tuple[int, ...] = FAE_SCHEDULE
    dec_schedule: tuple[int, ...] = tuple(reversed(FAE_SCHEDULE))
    windows: tuple[int, ...] = BANK_WINDOWS
    phase_aware: bool = True
    kernel: int = KERNEL
    slope: float = 0.2

    def __post_init__(self):
        if self.enc_schedule[-1] != self.dec_schedule[0]:
            raise ShapeError("decoder must start at the latent width")
        if len(self.windows) > len(self.enc_schedule) or len(self.windows) > len(self.dec_schedule):
            raise ShapeError("more resolutions than layers to attach them to")

    @property
    def latent_dim(self) -> int:
        return self.enc_schedule[-1]

    @property
    def base_bins(self) -> int:
        return self.windows[0] // 2 + 1

    @property
    def bins(self) -> tuple[int, ...]:
        return tuple(w // 2 + 1 for w in self.windows)

    @property
    def feature_channels(self) -> int:
        # log-amplitude, plus cos/sin of phase when phase is modelled
        return self.base_bins * (3 if self.phase_aware else 1)

    def for_encoder(self, schedule: tuple[int, ...]) -> "ModelConfig":
        return replace(self, enc_schedule=schedule)


def fae_config(scale: float = 1.0, **kw) -> ModelConfig:
    enc = scaled(FAE_SCHEDULE, scale)
    return ModelConfig(enc_schedule=enc, dec_schedule=tuple(reversed(enc)), **kw)


def dae_encoder_schedule(scale: float = 1.0) -> tuple[int, ...]:
    return scaled(DAE_SCHEDULE, scale)


@lru_cache(maxsize=None)
def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation between frequency grids spanning 0..Nyquist."""
    if n_in == n_out:
        m = np.eye(n_in)
    else:
        src = np.linspace(0.0, 1.0, n_in)
        dst = np.linspace(0.0, 1.0, n_out)
        m = np.stack([np.interp(dst, src, row) for row in np.eye(n_in)], axis=1)
    m.flags.writeable = False
    return m


def _glorot(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (c_in * k + c_out * k))
    return rng.uniform(-bound, bound, size=(c_out, c_in, k))


def _reads_features(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "l0" or leaf.startswith("inj"):
        return True
    # the DAE encoder trains from scratch against a fixed FAE latent and
    # diverges unless its whole hidden stack takes small effective steps
    return name.startswith("E2.") and leaf.startswith("l")


def _conv_params(params: dict, name: str, rng, c_out: int, c_in: int, k: int) -> None:
    w = _glorot(rng, c_out, c_in, k)
    if _reads_features(name):
        # stored at unit fan-in scale; _conv applies 1/sqrt(fan_in) at run time
        w *= np.sqrt(c_in * k)
    params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.b")


def init_encoder(cfg: ModelConfig, rng: np.random.Generator, prefix: str) -> dict[str, Tensor]:
    """Hidden convs, 1x1 injection projections, and mean/log-variance heads."""
    p: dict[str, Tensor] = {}
    k = cfg.kernel
    sched = cfg.enc_schedule
    width_in = cfg.feature_channels
    for i, width in enumerate(sched[:-1]):
        _conv_params(p, f"{prefix}.l{i}", rng, width, width_in, k)
        width_in = width
    for i in range(1, len(cfg.windows)):
        _conv_params(p, f"{prefix}.inj{i}", rng, sched[i - 1], cfg.feature_channels, 1)
    _conv_params(p, f"{prefix}.mu", rng, cfg.latent_dim, width_in, k)
    _conv_params(p, f"{prefix}.logvar", rng, cfg.latent_dim, width_in, k)
    return p


def init_decoder(cfg: ModelConfig, rng: np.random.Generator, prefix: str) -> dict[str, Tensor]:
    """Sequential stages, one output head per resolution."""
    p: dict[str, Tensor] = {}
    k = cfg.kernel
    width_in = cfg.latent_dim
    for i, width in enumerate(cfg.dec_schedule[: len(cfg.windows)]):
        _conv_params(p, f"{prefix}.s{i}", rng, width, width_in, k)
        width_in = width
    for i in range(len(cfg.windows)):
        _conv_params(p, f"{prefix}.head{i}", rng, cfg.base_bins, cfg.dec_schedule[i], k)
    return p


def _conv(params, name, x, pad=True):
    """Same-length convolution.

    Layers that read the raw feature stack have fan-ins in the thousands.
    Adam moves every weight by about ``lr`` on its first steps, which with
    plain weights shifts the layer output by ``lr * fan_in`` and blows up
    the fresh DAE encoder. Scaling those weights by ``1/sqrt(fan_in)`` at
    run time keeps the initial function but shrinks the effective step.
    The DAE encoder applies the same scaling to every hidden layer.
    """
    w = params[f"{name}.w"]
    k = w.shape[2]
    if _reads_features(name):
        w = w * (1.0 / np.sqrt(w.shape[1] * k))
    return T.conv1d(x, w, params[f"{name}.b"], 1, (k - 1) // 2 if pad else 0)


def features(cfg: ModelConfig, amplitude: Tensor, phase: Tensor | None) -> Tensor:
    """Encoder input for one resolution, resampled to the base bin grid."""
    if amplitude.ndim != 3:
        raise ShapeError(f"expected (B, F, N) planes, got {amplitude.shape}")
    parts = [T.log1p(amplitude)]
    if cfg.phase_aware:
        if phase is None:
            raise ShapeError("phase-aware encoder needs phase planes")
        parts += [T.cos(phase), T.sin(phase)]
    if amplitude.shape[1] != cfg.base_bins:
        to_base = resample_matrix(amplitude.shape[1], cfg.base_bins)
        parts = [T.channel_map(p, to_base) for p in parts]
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)


@dataclass
class Encoding:
    mean: Tensor
    log_variance: Tensor
    layers: list[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ShapeError("mean and log-variance shapes differ")


def encode(cfg: ModelConfig, params: dict[str, Tensor], prefix: str, bank) -> Encoding:
    """Map a bank ``[(amp, phase), ...]`` to a latent distribution.

    Resolution i enters at layer i: the first directly, the rest through a
    1x1 projection added to the previous layer's output. ``layers[i]`` is
    the feature map produced at layer i, used by the latent cycle term.
    """
    if len(bank) != len(cfg.windows):
        raise ShapeError(f"bank has {len(bank)} resolutions, model expects {len(cfg.windows)}")
    feats = [features(cfg, a, p) for a, p in bank]
    n_frames = feats[0].shape[-1]
    if any(f.shape[-1] != n_frames for f in feats):
        raise ShapeError("bank resolutions are not frame-aligned")
    n_hidden = len(cfg.enc_schedule) - 1
    h = feats[0]
    layers: list[Tensor] = []
    for i in range(n_hidden):
        if 0 < i < len(feats):
            h = h + _conv(params, f"{prefix}.inj{i}", feats[i], pad=False)
        h = T.leaky_relu(_conv(params, f"{prefix}.l{i}", h), cfg.slope)
        layers.append(h)
    if n_hidden < len(feats):
        h = h + _conv(params, f"{prefix}.inj{n_hidden}", feats[n_hidden], pad=False)
    mean = _conv(params, f"{prefix}.mu", h)
    log_var = _conv(params, f"{prefix}.logvar", h)
    layers.append(mean)
    return Encoding(mean, log_var, layers[: len(feats)])


def sample_latent(mean: Tensor, log_variance: Tensor, noise: Tensor) -> Tensor:
    """Reparameterised draw ``mean + exp(log_variance / 2) * noise``."""
    if noise.shape != mean.shape or log_variance.shape != mean.shape:
        raise ShapeError(f"noise {noise.shape} vs mean {mean.shape}")
    return mean + T.exp(log_variance * 0.5) * noise


def _decode(cfg: ModelConfig, params, prefix: str, z: Tensor, heads: int | None) -> list[Tensor]:
    if z.ndim != 3 or z.shape[1] != cfg.latent_dim:
        raise ShapeError(f"latent must be (B, {cfg.latent_dim}, N), got {z.shape}")
    n = len(cfg.windows) if heads is None else heads
    out = []
    h = z
    for i in range(n):
        h = T.leaky_relu(_conv(params, f"{prefix}.s{i}", h), cfg.slope)
        plane = _conv(params, f"{prefix}.head{i}", h)
        bins = cfg.bins[i]
        if bins != cfg.base_bins:
            plane = T.channel_map(plane, resample_matrix(cfg.base_bins, bins))
        out.append(plane)
    return out


def decode_amplitude(cfg: ModelConfig, params, prefix: str, z: Tensor, heads: int | None = None) -> list[Tensor]:
    """Non-negative amplitude planes, finest resolution first."""
    return [T.softplus(p) for p in _decode(cfg, params, prefix, z, heads)]


def decode_phase(cfg: ModelConfig, params, prefix: str, z: Tensor, heads: int | None = None) -> list[Tensor]:
    """Unbounded (unwrapped) phase planes, finest resolution first."""
    return _decode(cfg, params, prefix, z, heads)


# autoencoder container --------------------------------------------------------

@dataclass
class Autoencoder:
    """Encoder plus amplitude (and optionally phase) decoder."""

    config: ModelConfig
    params: dict[str, Tensor]
    enc: str
    amp: str
    phase: str

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def encode(self, bank) -> Encoding:
        return encode(self.config, self.params, self.enc, bank)

    def decode_amplitude(self, z, heads=None):
        return decode_amplitude(self.config, self.params, self.amp, z, heads)

    def decode_phase(self, z, heads=None):
        return decode_phase(self.config, self.params, self.phase, z, heads)


def init_fae(cfg: ModelConfig, rng: np.random.Generator) -> Autoencoder:
    params = init_encoder(cfg, rng, "E1")
    params.update(init_decoder(cfg, rng, "D11"))
    if cfg.phase_aware:
        params.update(init_decoder(cfg, rng, "D12"))
    return Autoencoder(cfg, params, "E1", "D11", "D12")


def init_dae(cfg: ModelConfig, rng: np.random.Generator, fae: Autoencoder | None = None) -> Autoencoder:
    """E2 is fresh; D21/D22 copy D11/D12 when an FAE is given."""
    params = init_encoder(cfg, rng, "E2")
    for src, dst in (("D11", "D21"), ("D12", "D22")):
        if dst == "D22" and not cfg.phase_aware:
            continue
        if fae is not None:
            for k, v in fae.subset(src).items():
                name = dst + k[len(src):]
                params[name] = Tensor(v.data, requires_grad=True, name=name)
        else:
            params.update(init_decoder(cfg, rng, dst))
    return Autoencoder(cfg, params, "E2", "D21", "D22")


def enhance(mixture, dae: Autoencoder, fae: Autoencoder, phase_aware: bool | None = None,
            segment_length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Encode a mixture with E2 and resynthesise it through D11/D12.

    The mixture is zero-padded by one window at each end and the bank is
    processed in chunks of as many frames as a training
    segment, with phase re-unwrapped from each chunk's first frame, so the
    networks only see phase ramps of the length they were trained on. The
    latent mean is used (no sampling). Without a phase decoder the
    mixture's own phase is reused.
    """
    if dae is None or fae is None or dae.enc != "E2" or fae.enc != "E1":
        raise StateError("enhancement needs a trained DAE encoder and FAE decoders")
    x = np.asarray(mixture, dtype=np.float64)
    window = dae.config.windows[0]
    if x.ndim != 1 or x.size < window:
        raise InputError(f"mixture needs at least {window} samples")
    if segment_length < window:
        raise InputError(f"segment_length must be at least {window}")
    if phase_aware is None:
        phase_aware = fae.config.phase_aware and f"{fae.phase}.head0.w" in fae.params
    # pad by a window each side so every output sample is fully overlapped;
    # near-empty window-square sums would otherwise amplify edge errors
    padded = np.pad(x, window)
    bank = aligned_bank(padded, dae.config.windows)
    total = bank[0][0].shape[1]
    chunk = n_frames(segment_length, window, BANK_HOP)
    amplitude = np.empty_like(bank[0][0])
    phase = wrap_phase(bank[0][1])
    starts = list(range(0, total, chunk))
    # full-length chunks go through as one batch, a short tail on its own
    groups = [[c for c in starts if c + chunk <= total], [c for c in starts if c + chunk > total]]
    for group in groups:
        if not group:
            continue
        width = min(chunk, total - group[0])
        planes = []
        for a, p in bank:
            amps = np.stack([a[:, c:c + width] for c in group])
            phases = unwrap_phase(wrap_phase(np.stack([p[:, c:c + width] for c in group])))
            planes.append((Tensor(amps), Tensor(phases) if dae.config.phase_aware else None))
        z = dae.encode(planes).mean
        amps_hat = fae.decode_amplitude(z, heads=1)[0].data
        phases_hat = wrap_phase(fae.decode_phase(z, heads=1)[0].data) if phase_aware else None
        for j, c in enumerate(group):
            amplitude[:, c:c + width] = amps_hat[j]
            if phase_aware:
                phase[:, c:c + width] = phases_hat[j]
    out = istft_array(amplitude * np.exp(1j * phase), window, BANK_HOP, window, padded.size)
    return out[window:window + x.size]
