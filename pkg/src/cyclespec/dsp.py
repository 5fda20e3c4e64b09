"""STFT analysis/synthesis, polar form, phase unwrapping, MFCC and WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.signal

from .errors import ConfigError, FormatError, InputError, IoError, ShapeError
from .tensor import Tensor

BANK_WINDOWS = (1024, 512, 256, 128)
BANK_HOP = 32
DEFAULT_SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ComplexSpectrogram:
    real: Tensor
    imag: Tensor
    window_size: int
    hop: int
    dft_size: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        _check_geometry(self.window_size, self.hop, self.dft_size)
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ShapeError(f"real/imag planes disagree: {self.real.shape} vs {self.imag.shape}")
        if self.real.shape[0] != self.dft_size // 2 + 1:
            raise ShapeError(f"{self.real.shape[0]} bins for dft_size {self.dft_size}")

    @property
    def n_frames(self) -> int:
        return self.real.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


@dataclass(frozen=True)
class PolarSpectrogram:
    amplitude: Tensor
    phase: Tensor
    window_size: int
    hop: int
    dft_size: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape:
            raise ShapeError(f"amplitude {self.amplitude.shape} vs phase {self.phase.shape}")
        if np.any(self.amplitude.data < 0):
            raise InputError("amplitude must be non-negative")

    @property
    def n_bins(self) -> int:
        return self.amplitude.shape[0]


@dataclass(frozen=True)
class MultiResSpectra:
    """Polar spectrograms sharing hop and sample rate, largest window first."""

    bank: tuple[PolarSpectrogram, ...]

    def __post_init__(self):
        if not self.bank:
            raise ShapeError("empty spectra bank")
        sizes = [p.window_size for p in self.bank]
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ShapeError(f"window sizes must strictly decrease, got {sizes}")
        if len({p.hop for p in self.bank}) != 1 or len({p.sample_rate for p in self.bank}) != 1:
            raise ShapeError("bank entries must share hop and sample rate")

    def __len__(self) -> int:
        return len(self.bank)

    def __getitem__(self, i: int) -> PolarSpectrogram:
        return self.bank[i]

    @property
    def windows(self) -> tuple[int, ...]:
        return tuple(p.window_size for p in self.bank)


def _check_geometry(window_size: int, hop: int, dft_size: int) -> None:
    if hop <= 0:
        raise ConfigError(f"hop must be positive, got {hop}")
    if window_size <= 0 or window_size > dft_size:
        raise ConfigError(f"window_size {window_size} must be in (0, dft_size={dft_size}]")
    if hop > window_size:
        raise ConfigError(f"hop {hop} exceeds window {window_size}")


@lru_cache(maxsize=None)
def hann(window_size: int) -> np.ndarray:
    """Periodic Hann window."""
    w = scipy.signal.get_window("hann", window_size, fftbins=True)
    w.flags.writeable = False
    return w


def n_frames(length: int, window_size: int, hop: int) -> int:
    return max(1, (length - window_size) // hop + 1)


def stft_array(signal: np.ndarray, window_size: int, hop: int, dft_size: int) -> np.ndarray:
    """Complex ``(F, N)`` STFT; frame n starts at sample ``n * hop``."""
    _check_geometry(window_size, hop, dft_size)
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError("signal must be a non-empty 1-D sequence")
    if x.size < window_size:
        x = np.pad(x, (0, window_size - x.size))
    frames = np.lib.stride_tricks.sliding_window_view(x, window_size)[::hop]
    return scipy.fft.rfft(frames * hann(window_size), n=dft_size, axis=1).T


def stft(signal, window_size: int = 1024, hop: int = BANK_HOP, dft_size: int = 1024,
         sample_rate: int = DEFAULT_SAMPLE_RATE) -> ComplexSpectrogram:
    spec = stft_array(signal, window_size, hop, dft_size)
    return ComplexSpectrogram(Tensor(spec.real), Tensor(spec.imag), window_size, hop, dft_size, sample_rate)


def istft_array(spec: np.ndarray, window_size: int, hop: int, dft_size: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse with window-square normalisation."""
    _check_geometry(window_size, hop, dft_size)
    if 2 * hop > window_size:
        raise ConfigError(f"hop {hop} too large for overlap-add with window {window_size}")
    window = hann(window_size)
    frames = scipy.fft.irfft(spec.T, n=dft_size, axis=1)[:, :window_size] * window
    count = frames.shape[0]
    total = (count - 1) * hop + window_size
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = window * window
    for n in range(count):
        out[n * hop:n * hop + window_size] += frames[n]
        norm[n * hop:n * hop + window_size] += w2
    nonzero = norm > 1e-8 * w2.max()
    out[nonzero] /= norm[nonzero]
    out[~nonzero] = 0.0
    if length <= total:
        return out[:length]
    return np.pad(out, (0, length - total))


def istft(spec: ComplexSpectrogram, length: int) -> np.ndarray:
    return istft_array(spec.to_complex(), spec.window_size, spec.hop, spec.dft_size, length)


def cola_interior(length: int, window_size: int, hop: int) -> slice:
    """Samples covered by the full complement of overlapping frames."""
    return slice(window_size, n_frames(length, window_size, hop) * hop)


def wrap_phase(phase):
    """Map radians onto the principal branch (-pi, pi]."""
    p = np.asarray(phase, dtype=np.float64)
    return p - TWO_PI * np.ceil((p - np.pi) / TWO_PI)


def unwrap_phase(phase):
    """Continue each row (frequency bin) along the frame axis.

    Successive differences are moved into (-pi, pi] by adding whole turns,
    so ``wrap_phase(unwrap_phase(p))`` recovers ``p``.
    """
    p = phase.data if isinstance(phase, Tensor) else np.asarray(phase, dtype=np.float64)
    if p.shape[-1] < 2:
        out = p.copy()
    else:
        d = np.diff(p, axis=-1)
        turns = -np.ceil((d - np.pi) / TWO_PI)
        shift = np.concatenate([np.zeros(p.shape[:-1] + (1,)), np.cumsum(turns, axis=-1)], axis=-1)
        out = p + TWO_PI * shift
    return Tensor(out) if isinstance(phase, Tensor) else out


def polar_arrays(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude and frame-unwrapped phase of a complex ``(..., F, N)`` grid."""
    amplitude = np.abs(spec)
    phase = np.arctan2(spec.imag, spec.real)
    phase[amplitude == 0] = 0.0
    return amplitude, unwrap_phase(phase)


def polar_decompose(spec: ComplexSpectrogram) -> PolarSpectrogram:
    amplitude, phase = polar_arrays(spec.to_complex())
    return PolarSpectrogram(Tensor(amplitude), Tensor(phase), spec.window_size, spec.hop,
                            spec.dft_size, spec.sample_rate)


def polar_recompose(polar: PolarSpectrogram) -> ComplexSpectrogram:
    a, p = polar.amplitude.data, polar.phase.data
    if np.any(a < 0):
        raise InputError("negative amplitude")
    return ComplexSpectrogram(Tensor(a * np.cos(p)), Tensor(a * np.sin(p)), polar.window_size,
                              polar.hop, polar.dft_size, polar.sample_rate)


def multi_res_arrays(signal: np.ndarray, windows=BANK_WINDOWS, hop: int = BANK_HOP):
    """``[(amplitude, phase), ...]`` per window, as plain arrays."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < max(windows):
        raise InputError(f"signal needs at least {max(windows)} samples, got {x.size}")
    return [polar_arrays(stft_array(x, w, hop, w)) for w in windows]


def multi_res(signal, windows=BANK_WINDOWS, hop: int = BANK_HOP,
              sample_rate: int = DEFAULT_SAMPLE_RATE) -> MultiResSpectra:
    """Polar spectra at every bank window; DFT size equals the window size."""
    planes = multi_res_arrays(signal, windows, hop)
    return MultiResSpectra(tuple(
        PolarSpectrogram(Tensor(a), Tensor(p), w, hop, w, sample_rate)
        for w, (a, p) in zip(windows, planes)
    ))


def aligned_bank(signal: np.ndarray, windows=BANK_WINDOWS, hop: int = BANK_HOP):
    """``[(amplitude, unwrapped phase), ...]`` on the largest window's frame grid.

    Smaller windows produce more frames; they are cropped so that frame
    centres coincide with the base frames before the phase is unwrapped.
    """
    base = windows[0]
    out = []
    n = None
    for w in windows:
        spec = stft_array(signal, w, hop, w)
        offset = int(round((base - w) / (2 * hop)))
        if n is None:
            n = spec.shape[1]
        spec = spec[:, offset:offset + n]
        out.append(polar_arrays(spec))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int, n_bins: int, sample_rate: int) -> np.ndarray:
    """Area-normalised triangular filters from 0 Hz to Nyquist, ``(n_mels, n_bins)``.

    The lowest filter's lower edge is mirrored below 0 Hz so that DC is
    covered. Filters narrower than the bin spacing fall back to the bin
    nearest their centre.
    """
    nyquist = sample_rate / 2.0
    freqs = np.linspace(0.0, nyquist, n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2))
    edges[0] = -edges[1]
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
        if fb[m].sum() <= 0:
            fb[m, np.argmin(np.abs(freqs - mid))] = 1.0
    fb /= fb.sum(axis=1, keepdims=True)
    fb.flags.writeable = False
    return fb


def mfcc(polar: PolarSpectrogram, n_mels: int = 40, n_coeffs: int = 13) -> Tensor:
    """Log mel energies of the power spectrum followed by an orthonormal DCT-II."""
    if n_coeffs > n_mels:
        raise ConfigError(f"n_coeffs={n_coeffs} exceeds n_mels={n_mels}")
    fb = mel_filterbank(n_mels, polar.n_bins, polar.sample_rate)
    energies = fb @ (polar.amplitude.data ** 2)
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    return Tensor(scipy.fft.dct(logmel, type=2, norm="ortho", axis=0)[:n_coeffs])


# WAV ------------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM RIFF file as float samples in [-1, 1), down-mixed to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            width = fh.getsampwidth()
            channels = fh.getnchannels()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated WAV") from exc
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    if width != 2:
        raise FormatError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm[: pcm.size - pcm.size % channels].reshape(-1, channels).mean(axis=1)
    return pcm, rate


def write_wav(path, samples, sample_rate: int = DEFAULT_SAMPLE_RATE) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    pcm = np.round(x * 32768.0).astype("<i2")
    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(int(sample_rate))
            fh.writeframes(pcm.tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
