"""Command-line entry point: ``cyclespec <command> [flags]``.

Exit status is 0 on success, 1 for invalid input or configuration and 2
for failures while running. Every command except ``enhance`` and
``gradcheck`` writes into a fresh run directory ``<out>/<timestamp>-seed<N>``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import ablation as A
from . import config as C
from . import gradsuite, plots
from .data import Manifest, load_signals, synth_corpus
from .dsp import read_wav, write_wav
from .errors import (ConfigError, CycleSpecError, DataError, InputError, ShapeError, StateError)
from .losses import write_report_csv
from .metrics import evaluate_set
from .model import enhance
from .train import load_net, train_dae, train_fae

log = logging.getLogger("cyclespec")

VALIDATION_ERRORS = (ConfigError, InputError, ShapeError, DataError, StateError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage problems are validation errors
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _threads() -> int:
    raw = os.environ.get("CYCLESPEC_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CYCLESPEC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("CYCLESPEC_THREADS must be at least 1")
    return n


@contextlib.contextmanager
def _thread_cap(n: int | None):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--paper-scale", action="store_true", help="full channel widths and epoch counts")
    common.add_argument("-v", "--verbose", action="store_true")
    run_root = _Parser(add_help=False)
    run_root.add_argument("--out", type=Path, default=Path("runs"), help="parent of the run directory")

    p = _Parser(prog="cyclespec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare-data", parents=[common, run_root], help="synthesise the toy corpus")
    s.add_argument("--snr", type=_floats, help="comma-separated SNR grid in dB")
    s.add_argument("--noise", type=_words, help="comma-separated noise kinds")

    s = sub.add_parser("train-fae", parents=[common, run_root], help="train the clean-speech autoencoder")
    s.add_argument("--data", type=Path, required=True, help="corpus manifest.tsv")

    s = sub.add_parser("train-dae", parents=[common, run_root], help="train the mixture autoencoder")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--fae", type=Path, required=True, help="FAE checkpoint")

    s = sub.add_parser("enhance", parents=[common], help="enhance one WAV file")
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--fae", type=Path, required=True)
    s.add_argument("--dae", type=Path, required=True)

    s = sub.add_parser("evaluate", parents=[common, run_root], help="score the test split")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--fae", type=Path, required=True)
    s.add_argument("--dae", type=Path, required=True)
    s.add_argument("--snr", type=_floats)
    s.add_argument("--noise", type=_words)
    s.add_argument("--jsonl", action="store_true", help="also write per-utterance JSON lines")

    s = sub.add_parser("ablate", parents=[common, run_root], help="toggle sweep over the three contributions")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--seeds", type=int, default=3, help="seeds per setting, counting up from --seed")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--seeds", type=int, default=20)
    return p


def _resolve(args) -> C.RunConfig:
    cfg = C.load(args.config, args.paper_scale) if args.config else (
        C.RunConfig(C.TrainConfig()) if args.paper_scale else C.RunConfig())
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def _run_dir(root: Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = root / f"{stamp}-seed{seed}"
    n = 1
    while path.exists():
        path = root / f"{stamp}-seed{seed}-{n}"
        n += 1
    path.mkdir(parents=True)
    return path


def _record(run: Path, cfg: C.RunConfig, argv: Sequence[str]) -> None:
    (run / "config.ini").write_text(C.dump(cfg))
    info = {
        "argv": list(argv),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": os.environ.get("CYCLESPEC_THREADS", ""),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (run / "reproduce.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _progress(stage: str, epoch: int, report) -> None:
    log.info("%s epoch %d: total %.6g", stage, epoch, report.J_total)


def _manifest(path: Path) -> Manifest:
    if not path.is_file():
        raise InputError(f"manifest {path} not found")
    return Manifest.load(path)


def _checkpoint(path: Path, what: str) -> Path:
    if not path.is_file():
        raise StateError(f"{what} checkpoint {path} not found")
    return path


def cmd_prepare_data(args, cfg: C.RunConfig, run: Path) -> None:
    corpus = cfg.corpus
    if args.snr:
        corpus = replace(corpus, snr_grid=args.snr)
    if args.noise:
        corpus = replace(corpus, noise_kinds=args.noise)
    manifest = synth_corpus(run / "corpus", corpus, cfg.train.seed)
    print(run / "corpus" / "manifest.tsv")
    log.info("wrote %d entries", len(manifest.entries))


def cmd_train_fae(args, cfg: C.RunConfig, run: Path) -> None:
    manifest = _manifest(args.data)
    clean = load_signals(manifest, manifest.select("fae", "clean"))
    phase = train_fae(clean, cfg.train, run, _progress)
    plots.loss_curves(phase.history, run / "fae_losses.png", "FAE losses")
    print(run / "fae.ckpt")


def cmd_train_dae(args, cfg: C.RunConfig, run: Path) -> None:
    fae = load_net(_checkpoint(args.fae, "FAE"))
    manifest = _manifest(args.data)
    mixtures = load_signals(manifest, manifest.select("dae", "mixture"))
    phase = train_dae(mixtures, fae, cfg.train, run, _progress)
    plots.loss_curves(phase.history, run / "dae_losses.png", "DAE losses")
    print(run / "dae.ckpt")


def cmd_enhance(args, cfg: C.RunConfig) -> None:
    fae = load_net(_checkpoint(args.fae, "FAE"))
    dae = load_net(_checkpoint(args.dae, "DAE"))
    if not args.input.is_file():
        raise InputError(f"input {args.input} not found")
    samples, rate = read_wav(args.input)
    write_wav(args.out, enhance(samples, dae, fae, segment_length=cfg.train.segment_length), rate)


def cmd_evaluate(args, cfg: C.RunConfig, run: Path) -> None:
    fae = load_net(_checkpoint(args.fae, "FAE"))
    dae = load_net(_checkpoint(args.dae, "DAE"))
    manifest = _manifest(args.data)
    noise = args.noise[0] if args.noise and len(args.noise) == 1 else None
    report = evaluate_set(manifest, lambda m: enhance(m, dae, fae, segment_length=cfg.train.segment_length),
                          workers=_threads(), noise_kind=noise, snrs=args.snr)
    if args.noise and len(args.noise) > 1:
        report.rows = [r for r in report.rows if r.noise_kind in args.noise]
    report.write_csv(run / "metrics.csv")
    report.write_rows_csv(run / "metrics_rows.csv")
    if args.jsonl:
        report.write_jsonl(run / "metrics.jsonl")
    plots.metric_bars(report, run / "metrics_sdr.png")
    first = report.rows[0]
    by_id = {e.id: e for e in manifest.entries}
    mix_entry = by_id[first.id]
    mixture, clean = load_signals(manifest, [mix_entry, by_id[mix_entry.source]])
    plots.spectrograms({"clean": clean, f"mixture {first.snr_db:+g} dB {first.noise_kind}": mixture,
                        "enhanced": enhance(mixture, dae, fae)}, run / "spectrograms.png")
    print(run / "metrics.csv")


def cmd_ablate(args, cfg: C.RunConfig, run: Path) -> None:
    manifest = _manifest(args.data)
    seeds = [cfg.train.seed + i for i in range(args.seeds)]
    result = A.run_ablation(manifest, cfg.train, seeds, out_dir=run, workers=_threads(),
                            progress=lambda msg: log.info(msg))
    result.write_csv(run / "ablation_runs.csv")
    result.write_summary_csv(run / "ablation.csv")
    plots.ablation_bars([(A.label(t), m, h) for t, m, h, _ in result.summary()], run / "ablation.png")
    for name, full, other, status in result.ordering():
        print(f"full {full:.3f} dB vs {name} {other:.3f} dB: {status}")
    print(run / "ablation.csv")


def cmd_gradcheck(args, cfg: C.RunConfig) -> bool:
    result = gradsuite.run(args.seeds)
    for name, err in result.worst.items():
        print(f"{name:28s} {err:.3e} {'ok' if err <= gradsuite.TOLERANCE else 'FAIL'}")
    print(f"{len(result.worst)} ops, {result.seeds} seeds, {result.seconds:.1f}s")
    return result.passed


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        threads = _threads() if os.environ.get("CYCLESPEC_THREADS") else None
        cfg = _resolve(args)
        with _thread_cap(threads):
            if args.command == "gradcheck":
                return 0 if cmd_gradcheck(args, cfg) else 2
            if args.command == "enhance":
                cmd_enhance(args, cfg)
                return 0
            if args.command == "train-dae":
                _checkpoint(args.fae, "FAE")  # fail before creating a run directory
            run_dir = _run_dir(args.out, cfg.train.seed)
            _record(run_dir, cfg, argv)
            handler = {
                "prepare-data": cmd_prepare_data,
                "train-fae": cmd_train_fae,
                "train-dae": cmd_train_dae,
                "evaluate": cmd_evaluate,
                "ablate": cmd_ablate,
            }[args.command]
            handler(args, cfg, run_dir)
        return 0
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CycleSpecError, OSError, FloatingPointError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
