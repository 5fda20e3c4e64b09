"""Synthetic corpus generation, SNR-controlled mixing, WAV ingestion, manifests."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.signal

from .dsp import DEFAULT_SAMPLE_RATE, read_wav, write_wav
from .errors import DataError, FormatError, InputError, IoError

log = logging.getLogger(__name__)

SNR_GRID = (-10.0, -5.0, 0.0, 5.0)
NOISE_KINDS = ("stationary", "babble", "cafe")
ROLES = ("clean", "noise", "mixture")
SPLITS = ("fae", "dae", "test")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    role: str
    split: str
    snr_db: float | None = None
    noise_kind: str | None = None
    source: str | None = None  # clean utterance a mixture was built from

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"{self.id}: unknown role {self.role!r}")
        if self.split not in SPLITS:
            raise DataError(f"{self.id}: unknown split {self.split!r}")


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Ids unique; no utterance appears in more than one split."""
        seen: dict[str, str] = {}
        for e in self.entries:
            if e.id in seen:
                raise DataError(f"duplicate id {e.id!r}")
            seen[e.id] = e.split
        utterance_split: dict[str, str] = {}
        for e in self.entries:
            if e.role == "noise":
                continue
            utt = e.source or e.id
            prev = utterance_split.setdefault(utt, e.split)
            if prev != e.split:
                raise DataError(f"utterance {utt!r} appears in both {prev} and {e.split} splits")
            if e.source is not None and e.source in seen and seen[e.source] != e.split:
                raise DataError(f"{e.id}: source {e.source!r} lives in split {seen[e.source]}")

    def select(self, split: str | None = None, role: str | None = None) -> list[ManifestEntry]:
        return [e for e in self.entries
                if (split is None or e.split == split) and (role is None or e.role == role)]

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.id: e for e in self.entries}

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def save(self, path) -> None:
        lines = []
        for e in self.entries:
            cols = [e.id, e.path, e.role, e.split,
                    "" if e.snr_db is None else repr(float(e.snr_db)),
                    e.noise_kind or ""]
            if e.source:
                cols.append(e.source)
            lines.append("\t".join(cols))
        _atomic_write(Path(path), "".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 6:
                raise DataError(f"{path}:{lineno}: expected 6 tab-separated fields")
            entries.append(ManifestEntry(
                id=cols[0], path=cols[1], role=cols[2], split=cols[3],
                snr_db=float(cols[4]) if cols[4] else None,
                noise_kind=cols[5] or None,
                source=cols[6] if len(cols) > 6 and cols[6] else None,
            ))
        return cls(entries, root=path.parent)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def check_disjoint(first: Iterable[ManifestEntry], second: Iterable[ManifestEntry]) -> None:
    """Raise DataError if two entry sets share an utterance or a file."""
    first = list(first)
    second = list(second)
    ids = {e.source or e.id for e in first}
    paths = {os.path.realpath(e.path) for e in first}
    for e in second:
        if (e.source or e.id) in ids:
            raise DataError(f"utterance {e.source or e.id!r} is in both training sets")
        if os.path.realpath(e.path) in paths:
            raise DataError(f"file {e.path!r} is in both training sets")


# mixing ---------------------------------------------------------------------

def power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x) / x.size)


def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile (if short) and cut ``length`` samples from a random offset."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise InputError("empty noise")
    rng = rng or np.random.default_rng(0)
    reps = -(-(length + noise.size) // noise.size)
    tiled = np.tile(noise, reps) if noise.size < 2 * length else noise
    start = int(rng.integers(0, tiled.size - length + 1))
    return tiled[start:start + length]


def mix_at_snr(clean, noise, snr_db: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add noise scaled to a global signal-to-noise ratio of ``snr_db``."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size != clean.size:
        noise = fit_noise(noise, clean.size, rng)
    p_clean, p_noise = power(clean), power(noise)
    if p_clean <= 0 or p_noise <= 0:
        raise InputError("clean and noise must both have non-zero power")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


def achieved_snr(clean, mixture) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    residual = np.asarray(mixture, dtype=np.float64) - clean
    return 10.0 * np.log10(power(clean) / power(residual))


# synthetic corpus ------------------------------------------------------------

def _smooth_track(rng, n: int, lo: float, hi: float, knots: int) -> np.ndarray:
    """Random values in [lo, hi] joined by cosine interpolation."""
    pts = rng.uniform(lo, hi, size=knots)
    x = np.linspace(0, knots - 1, n)
    i = np.minimum(x.astype(int), knots - 2)
    frac = x - i
    w = 0.5 - 0.5 * np.cos(np.pi * frac)
    return pts[i] * (1 - w) + pts[i + 1] * w


def speech_like(rng: np.random.Generator, n: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Voiced harmonic stack with a pitch contour, moving formants and syllables."""
    t = np.arange(n) / sample_rate
    dur = n / sample_rate
    knots = max(3, int(dur * 6))
    f0 = _smooth_track(rng, n, *sorted(rng.uniform(85, 260, size=2)), knots)
    f0 *= 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 7) * t)
    phase0 = 2 * np.pi * np.cumsum(f0) / sample_rate
    formants = [
        _smooth_track(rng, n, 300, 850, knots),
        _smooth_track(rng, n, 900, 2300, knots),
        _smooth_track(rng, n, 2300, 3400, knots),
    ]
    bandwidths = (90.0, 130.0, 200.0)
    gains_db = (0.0, -6.0, -12.0)
    out = np.zeros(n)
    n_harm = int(sample_rate / 2 / 85)
    for h in range(1, n_harm + 1):
        fh = h * f0
        alive = fh < 0.45 * sample_rate
        if not alive.any():
            break
        env_db = -4.0 * np.log2(np.maximum(fh, 50) / 100.0)
        resonance = np.zeros(n)
        for fc, bw, g in zip(formants, bandwidths, gains_db):
            resonance += 10 ** (g / 20) * np.exp(-0.5 * ((fh - fc) / bw) ** 2)
        amp = 10 ** (env_db / 20) * (0.08 + resonance) * alive
        out += amp * np.cos(h * phase0 + rng.uniform(0, 2 * np.pi))
    # syllabic envelope: raised-cosine bursts separated by short gaps
    envelope = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.05) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.3) * sample_rate)
        seg = np.hanning(length) ** 0.5 * rng.uniform(0.5, 1.0)
        end = min(n, pos + length)
        envelope[pos:end] = np.maximum(envelope[pos:end], seg[: end - pos])
        pos = end + int(rng.uniform(0.02, 0.08) * sample_rate)
    x = out * envelope
    return 0.3 * x / (np.max(np.abs(x)) + 1e-12)


def noise_signal(kind: str, rng: np.random.Generator, n: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    if kind == "stationary":
        x = rng.standard_normal(n)
    elif kind == "babble":
        x = sum(speech_like(rng, n, sample_rate) for _ in range(6))
    elif kind == "cafe":
        white = rng.standard_normal(n)
        b, a = scipy.signal.butter(2, 1500 / (sample_rate / 2))
        x = scipy.signal.lfilter(b, a, white)
        t = np.arange(n) / sample_rate
        x *= 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t)
        for _ in range(max(1, int(n / sample_rate * 3))):
            start = int(rng.integers(0, max(1, n - 800)))
            clink = np.sin(2 * np.pi * rng.uniform(2000, 5000) * np.arange(800) / sample_rate)
            x[start:start + 800] += 3.0 * np.std(x) * clink * np.exp(-np.arange(800) / 150.0)
    else:
        raise InputError(f"unknown noise kind {kind!r}")
    return 0.3 * x / (np.max(np.abs(x)) + 1e-12)


@dataclass(frozen=True)
class CorpusConfig:
    fae_clean: int = 12
    dae_mixtures: int = 188
    test_utterances: int = 30
    duration_s: float = 0.5
    noise_duration_s: float = 10.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    snr_grid: tuple[float, ...] = SNR_GRID
    noise_kinds: tuple[str, ...] = NOISE_KINDS


def synth_corpus(out_dir, config: CorpusConfig = CorpusConfig(), seed: int = 0) -> Manifest:
    """Write a synthetic corpus with disjoint fae/dae/test utterances.

    FAE gets clean utterances only and the DAE gets mixtures only, each
    built from a different utterance. Every test utterance is mixed at every
    (SNR, noise) cell.
    """
    root = Path(out_dir)
    rng = np.random.default_rng(seed)
    n = int(round(config.duration_s * config.sample_rate))
    n_noise = int(round(config.noise_duration_s * config.sample_rate))
    entries: list[ManifestEntry] = []

    def put(rel: str, x: np.ndarray) -> str:
        path = root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav(path, x, config.sample_rate)
        except OSError as exc:
            raise IoError(f"{path}: {exc}") from exc
        return rel

    noises: dict[tuple[str, str], np.ndarray] = {}
    for split in ("dae", "test"):
        for kind in config.noise_kinds:
            x = noise_signal(kind, rng, n_noise, config.sample_rate)
            nid = f"noise-{split}-{kind}"
            entries.append(ManifestEntry(nid, put(f"noise/{nid}.wav", x), "noise", split, None, kind))
            noises[split, kind] = x

    for i in range(config.fae_clean):
        uid = f"fae-{i:03d}"
        entries.append(ManifestEntry(uid, put(f"clean/{uid}.wav", speech_like(rng, n, config.sample_rate)),
                                     "clean", "fae"))

    for i in range(config.dae_mixtures):
        uid = f"dae-{i:03d}"
        clean = speech_like(rng, n, config.sample_rate)
        kind = config.noise_kinds[int(rng.integers(len(config.noise_kinds)))]
        snr = float(config.snr_grid[int(rng.integers(len(config.snr_grid)))])
        mix = mix_at_snr(clean, noises["dae", kind], snr, rng)
        entries.append(ManifestEntry(f"{uid}-mix", put(f"mixture/{uid}.wav", mix), "mixture", "dae",
                                     snr, kind, source=uid))

    for i in range(config.test_utterances):
        uid = f"test-{i:03d}"
        clean = speech_like(rng, n, config.sample_rate)
        entries.append(ManifestEntry(uid, put(f"test/clean/{uid}.wav", clean), "clean", "test"))
        for kind in config.noise_kinds:
            for snr in config.snr_grid:
                mid = f"{uid}-{kind}-{snr:+.0f}dB"
                mix = mix_at_snr(clean, noises["test", kind], snr, rng)
                entries.append(ManifestEntry(mid, put(f"test/mixture/{mid}.wav", mix), "mixture", "test",
                                             float(snr), kind, source=uid))

    manifest = Manifest(entries, root=root)
    manifest.save(root / "manifest.tsv")
    return manifest


# ingestion ------------------------------------------------------------------

def ingest(directory, role: str, split: str = "dae") -> list[ManifestEntry]:
    """Register every WAV under ``directory``; ids are content hashes.

    Files whose content duplicates an earlier file are skipped with a
    warning. Non-PCM16 files raise FormatError naming the path.
    """
    root = Path(directory)
    if not root.is_dir():
        raise IoError(f"{root}: not a directory")
    entries: list[ManifestEntry] = []
    seen: dict[str, Path] = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in (".wav", ".wave"):
            continue
        samples, _ = read_wav(path)
        if samples.size == 0:
            raise FormatError(f"{path}: no audio frames")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
        if digest in seen:
            log.warning("duplicate content: %s repeats %s, skipped", path, seen[digest])
            continue
        seen[digest] = path
        entries.append(ManifestEntry(digest, str(path.resolve()), role, split))
    return entries


def load_signal(manifest: Manifest, entry: ManifestEntry) -> np.ndarray:
    path = manifest.resolve(entry)
    if not path.exists():
        raise IoError(f"missing file for {entry.id}: {path}")
    samples, _ = read_wav(path)
    return samples


def load_signals(manifest: Manifest, entries: Sequence[ManifestEntry]) -> list[np.ndarray]:
    missing = [e.id for e in entries if not manifest.resolve(e).exists()]
    if missing:
        raise IoError(f"missing audio for ids: {', '.join(missing)}")
    return [load_signal(manifest, e) for e in entries]
