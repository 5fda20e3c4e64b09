import json

import numpy as np
import pytest

from cyclespec import cli
from cyclespec.dsp import read_wav, write_wav

TINY = """
[dsp]
segment_length = 1024
[train]
fae_epochs = 1
dae_epochs = 1
batch = 4
checkpoint_every = 0
[data]
fae_clean = 3
dae_mixtures = 4
test_utterances = 1
noise_duration_s = 1.0
snr_grid = 0, 5
noise_kinds = stationary
"""


def _only_dir(root):
    (path,) = [p for p in root.iterdir() if p.is_dir()]
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Runs the commands in order once and shares the artefacts."""
    root = tmp_path_factory.mktemp("cli")
    ini = root / "tiny.ini"
    ini.write_text(TINY)
    out = {"root": root, "ini": ini}

    def step(name, *argv):
        run_root = root / name
        code = cli.run([name.split("/")[0], "--config", str(ini), "--out", str(run_root), *argv])
        out[name] = (code, _only_dir(run_root) if run_root.exists() else None)
        return out[name][1]

    corpus = step("prepare-data") / "corpus" / "manifest.tsv"
    out["manifest"] = corpus
    fae = step("train-fae", "--data", str(corpus)) / "fae.ckpt"
    dae = step("train-dae", "--data", str(corpus), "--fae", str(fae)) / "dae.ckpt"
    out["fae"], out["dae"] = fae, dae
    step("evaluate", "--data", str(corpus), "--fae", str(fae), "--dae", str(dae), "--jsonl")
    return out


@pytest.mark.parametrize("name", ["prepare-data", "train-fae", "train-dae", "evaluate"])
def test_commands_succeed(pipeline, name):
    assert pipeline[name][0] == 0


def test_run_directory_layout(pipeline):
    _, run = pipeline["train-fae"]
    assert run.name.endswith("-seed0")
    names = {p.name for p in run.iterdir()}
    assert {"config.ini", "reproduce.json", "fae.ckpt", "fae.ckpt.txt", "fae_losses.csv",
            "fae_losses.png"} <= names
    info = json.loads((run / "reproduce.json").read_text())
    assert info["argv"][0] == "train-fae"
    _, ev = pipeline["evaluate"]
    assert {"metrics.csv", "metrics_rows.csv", "metrics.jsonl", "metrics_sdr.png",
            "spectrograms.png"} <= {p.name for p in ev.iterdir()}


def test_enhance_preserves_length_and_rate(pipeline, tmp_path, rng):
    src = tmp_path / "in.wav"
    write_wav(src, rng.uniform(-0.3, 0.3, 3001), 8000)
    dst = tmp_path / "out.wav"
    code = cli.run(["enhance", "--config", str(pipeline["ini"]), "--in", str(src), "--out", str(dst),
                    "--fae", str(pipeline["fae"]), "--dae", str(pipeline["dae"])])
    assert code == 0
    samples, rate = read_wav(dst)
    assert samples.size == 3001 and rate == 8000
    assert np.all(np.isfinite(samples))


def test_train_dae_without_fae(pipeline, tmp_path, capsys):
    code = cli.run(["train-dae", "--data", str(pipeline["manifest"]), "--fae", str(tmp_path / "none.ckpt"),
                    "--out", str(tmp_path / "runs")])
    assert code == 1
    assert not (tmp_path / "runs").exists()
    assert "FAE checkpoint" in capsys.readouterr().err


def test_missing_manifest(tmp_path):
    assert cli.run(["train-fae", "--data", str(tmp_path / "m.tsv"), "--out", str(tmp_path)]) == 1


def test_enhance_missing_input(pipeline, tmp_path):
    code = cli.run(["enhance", "--in", str(tmp_path / "no.wav"), "--out", str(tmp_path / "o.wav"),
                    "--fae", str(pipeline["fae"]), "--dae", str(pipeline["dae"])])
    assert code == 1


@pytest.mark.parametrize("argv", [["train-fae", "--bogus"], [], ["prepare-data", "--snr", "loud"]])
def test_usage_errors_exit_one(argv, capsys):
    assert cli.run(argv) == 1


def test_bad_config_value(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[train]\nbatch = many\n")
    assert cli.run(["prepare-data", "--config", str(ini), "--out", str(tmp_path / "r")]) == 1


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("CYCLESPEC_THREADS", "zero")
    assert cli.run(["prepare-data", "--out", str(tmp_path)]) == 1


def test_gradcheck(capsys):
    assert cli.run(["gradcheck", "--seeds", "1"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_ablate(pipeline, tmp_path, capsys):
    code = cli.run(["ablate", "--config", str(pipeline["ini"]), "--data", str(pipeline["manifest"]),
                    "--seeds", "1", "--out", str(tmp_path)])
    assert code == 0
    run = _only_dir(tmp_path)
    assert (run / "ablation.csv").exists() and (run / "ablation.png").exists()
    lines = [x for x in capsys.readouterr().out.splitlines() if x.startswith("full")]
    assert len(lines) == 3
