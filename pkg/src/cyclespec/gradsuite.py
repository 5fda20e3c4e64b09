"""Finite-difference checks for every differentiable building block.

Each case is a function of a few small random arrays. The suite runs every
case for each seed and keeps the worst relative error per case.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import tensor as T
from .model import ModelConfig, decode_amplitude, decode_phase, encode, init_decoder, init_encoder, sample_latent

TOLERANCE = 1e-4


@dataclass(frozen=True)
class Case:
    name: str
    fn: Callable[..., T.Tensor]
    make: Callable[[np.random.Generator], list[np.ndarray]]


def _normal(*shape):
    return lambda rng: [rng.standard_normal(shape)]


def _positive(*shape):
    return lambda rng: [np.abs(rng.standard_normal(shape)) + 0.5]


def _pair(*shape):
    return lambda rng: [rng.standard_normal(shape), rng.standard_normal(shape)]


def _banks(rng, n_planes=2, shape=(2, 5, 4)):
    """Alternating target/estimate planes for ``n_planes`` resolutions."""
    return [rng.standard_normal((shape[0], max(2, shape[1] - i), shape[2]))
            for i in range(n_planes) for _ in range(2)]


def _split(arrs):
    return list(arrs[0::2]), list(arrs[1::2])


def _bank_loss(fn):
    def wrapped(*planes):
        targets, estimates = _split(planes)
        return fn(targets, estimates)
    return wrapped


def _combined(fn, theta=0.37):
    def wrapped(*planes):
        t, e = _split(planes)
        half = len(t) // 2
        base = L.bank_error(t[:half], e[:half])
        extra = L.bank_error(t[half:], e[half:])
        return fn(base, extra, theta)
    return wrapped


def _cycle(*arrs):
    spec_t, spec_e, z1, zh1, z2, zh2 = arrs
    spectra = L.bank_error([spec_t], [spec_e])
    return L.cycle_loss(spectra, [z1, z2], [zh1, zh2], 0.41)


def _total(mean, logvar, t, e, zt, ze):
    kl = L.kl_loss(mean, logvar)
    spectra = L.bank_error([t], [e])
    cyc = L.cycle_loss(spectra, [zt], [ze], 0.3)
    return L.fae_total(kl, spectra, cyc, 0.2)


_TINY = ModelConfig(enc_schedule=(5, 3), dec_schedule=(3, 4), windows=(16, 8))


def _autoencode(a0, p0, a1, p1):
    """Tiny two-resolution VAE pass, differentiated through its inputs."""
    rng = np.random.default_rng(7)
    params = init_encoder(_TINY, rng, "E") | init_decoder(_TINY, rng, "A") | init_decoder(_TINY, rng, "P")
    enc = encode(_TINY, params, "E", [(T.softplus(a0), p0), (T.softplus(a1), p1)])
    out = decode_amplitude(_TINY, params, "A", enc.mean) + decode_phase(_TINY, params, "P", enc.log_variance)
    total = T.sum(T.square(out[0]))
    for o in out[1:]:
        total = total + T.sum(T.square(o))
    return total


def _tiny_bank(rng):
    return [rng.standard_normal((2, 9, 5)), rng.standard_normal((2, 9, 5)),
            rng.standard_normal((2, 5, 5)), rng.standard_normal((2, 5, 5))]


def cases() -> list[Case]:
    conv_shapes = lambda b, c, t, o, k: lambda rng: [  # noqa: E731
        rng.standard_normal((b, c, t)), rng.standard_normal((o, c, k)), rng.standard_normal(o)]
    return [
        Case("add", lambda a, b: a + b, _pair(3, 4)),
        Case("sub", lambda a, b: a - b, _pair(3, 4)),
        Case("mul", lambda a, b: a * b, _pair(3, 4)),
        Case("neg", lambda a: -a, _normal(3, 4)),
        Case("square", T.square, _normal(3, 4)),
        Case("exp", T.exp, _normal(3, 4)),
        Case("log", T.log, _positive(3, 4)),
        Case("log1p", T.log1p, _positive(3, 4)),
        Case("sin", T.sin, _normal(3, 4)),
        Case("cos", T.cos, _normal(3, 4)),
        Case("softplus", T.softplus, _normal(3, 4)),
        Case("leaky_relu", lambda a: T.leaky_relu(a, 0.2), _normal(3, 4)),
        Case("sum", T.sum, _normal(3, 4)),
        Case("mean", T.mean, _normal(3, 4)),
        Case("sq_dist", T.sq_dist, _pair(3, 4)),
        Case("concat", lambda a, b: T.concat([a, b], axis=1), _pair(2, 3, 4)),
        Case("slice_axis", lambda a: T.slice_axis(a, 1, 1, 3), _normal(2, 4, 3)),
        Case("channel_map", lambda a: T.channel_map(a, np.arange(12.0).reshape(3, 4) / 7.0),
             _normal(2, 4, 5)),
        Case("conv1d", lambda x, w, b: T.conv1d(x, w, b, 1, 3), conv_shapes(2, 3, 9, 4, 7)),
        Case("conv1d_strided", lambda x, w, b: T.conv1d(x, w, b, 2, 1), conv_shapes(2, 3, 9, 2, 3)),
        Case("conv1d_unbatched", lambda x, w, b: T.conv1d(x, w, b, 1, 0),
             lambda rng: [rng.standard_normal((2, 6)), rng.standard_normal((3, 2, 3)), rng.standard_normal(3)]),
        Case("sample_latent", lambda m, lv, n: sample_latent(m, lv, n),
             lambda rng: [rng.standard_normal((2, 3, 4)) for _ in range(3)]),
        Case("kl", L.kl_loss, _pair(2, 3, 4)),
        Case("bank_error", _bank_loss(L.bank_error), _banks),
        Case("bank_error_per_element",
             _bank_loss(lambda t, e: L.bank_error(t, e, per_element=True)), _banks),
        Case("amplitude_loss", _bank_loss(L.amplitude_loss), _banks),
        Case("phase_loss", _bank_loss(L.phase_loss), _banks),
        Case("bc_phase_loss", _bank_loss(L.bc_phase_loss), _banks),
        Case("bc_amplitude_loss", _bank_loss(L.bc_amplitude_loss), _banks),
        Case("combined_phase_loss", _combined(L.combined_phase_loss),
             lambda rng: _banks(rng, n_planes=2)),
        Case("combined_amplitude_loss", _combined(L.combined_amplitude_loss),
             lambda rng: _banks(rng, n_planes=2)),
        Case("spectra_loss", lambda at, ae, pt, pe: L.spectra_loss([at], [ae], [pt], [pe]),
             lambda rng: [rng.standard_normal((2, 5, 4)) for _ in range(4)]),
        Case("latent_cycle_loss", _cycle,
             lambda rng: [rng.standard_normal((2, 5, 4)) for _ in range(2)]
             + [rng.standard_normal((2, 3, 4)) for _ in range(4)]),
        Case("autoencoder", _autoencode, _tiny_bank),
        Case("fae_total", _total, lambda rng: [rng.standard_normal((2, 3, 4)) for _ in range(6)]),
    ]


@dataclass(frozen=True)
class SuiteResult:
    worst: dict[str, float]
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return all(v <= TOLERANCE for v in self.worst.values())

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.worst.items() if v > TOLERANCE}


def run(seeds: int = 20, h: float = 1e-5) -> SuiteResult:
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for case in cases():
        for seed in range(seeds):
            rng = np.random.default_rng([seed, len(case.name)])
            err = T.gradcheck(case.fn, case.make(rng), h=h, rng=rng)
            worst[case.name] = max(worst.get(case.name, 0.0), err)
    return SuiteResult(worst, seeds, time.perf_counter() - t0)
