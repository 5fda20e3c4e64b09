"""Plain-text ``key = value`` run configuration.

Sections are ``[dsp]``, ``[model]``, ``[train]`` and ``[data]``. Unknown
sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import CorpusConfig
from .errors import ConfigError
from .train import TrainConfig, desk_config

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"weights"}
_DATA_KEYS = {f.name for f in fields(CorpusConfig)}
_WEIGHT_KEYS = {"theta1", "theta2", "theta3"}
# keys accepted in each section and the TrainConfig / CorpusConfig field they set
_SECTIONS = {
    "dsp": {"sample_rate", "segment_length"},
    "model": {"scale_preset", "slope", "multi_resolution", "phase_aware", "init_dae_decoders"},
    "train": (_TRAIN_KEYS | _WEIGHT_KEYS) - {"scale_preset", "slope", "multi_resolution",
                                             "phase_aware", "init_dae_decoders", "segment_length"},
    "data": _DATA_KEYS - {"sample_rate"},
}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=desk_config)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            kind = type(like[0]) if like else str
            return tuple(kind(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r}: {exc}") from None
    return raw.strip()


def parse(text: str, base: RunConfig | None = None, paper_scale: bool = False) -> RunConfig:
    """Apply a config document on top of ``base`` (desk defaults if omitted)."""
    base = base or (RunConfig(TrainConfig()) if paper_scale else RunConfig())
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    train_kw: dict = {}
    weight_kw: dict = {}
    corpus_kw: dict = {}
    for section in parser.sections():
        allowed = _SECTIONS.get(section)
        if allowed is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if key in _WEIGHT_KEYS:
                weight_kw[key] = _coerce(raw, 0.0)
            elif key == "sample_rate":
                corpus_kw[key] = _coerce(raw, 0)
            elif key in _TRAIN_KEYS:
                train_kw[key] = _coerce(raw, getattr(base.train, key))
            else:
                corpus_kw[key] = _coerce(raw, getattr(base.corpus, key))
    try:
        if weight_kw:
            train_kw["weights"] = replace(base.train.weights, **weight_kw)
        return RunConfig(replace(base.train, **train_kw), replace(base.corpus, **corpus_kw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path, paper_scale: bool = False) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse(p.read_text(), paper_scale=paper_scale)


def dump(cfg: RunConfig) -> str:
    """Render every resolved setting; ``parse(dump(c))`` reproduces ``c``."""

    def fmt(v) -> str:
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)

    t, c = cfg.train, cfg.corpus
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in sorted(keys):
            if key in _WEIGHT_KEYS:
                value = getattr(t.weights, key)
            elif key == "sample_rate":
                value = c.sample_rate
            elif key in _TRAIN_KEYS:
                value = getattr(t, key)
            else:
                value = getattr(c, key)
            lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)

