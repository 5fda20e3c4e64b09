"""Shared fixtures: small synthetic corpora and a tiny trainable config."""

import numpy as np
import pytest

from cyclespec.data import CorpusConfig, Manifest, synth_corpus
from cyclespec.train import desk_config


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory) -> Manifest:
    """The default desk corpus: 12 FAE clean, 188 DAE mixtures, 30 test utterances."""
    return synth_corpus(tmp_path_factory.mktemp("desk-corpus"), CorpusConfig(), seed=0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Manifest:
    cfg = CorpusConfig(fae_clean=3, dae_mixtures=4, test_utterances=2, noise_duration_s=1.0,
                       snr_grid=(0.0, 5.0), noise_kinds=("stationary", "babble"))
    return synth_corpus(tmp_path_factory.mktemp("tiny-corpus"), cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Desk widths with short crops and small batches, for quick training tests."""
    return desk_config(fae_epochs=2, dae_epochs=2, batch=4, segment_length=1024, checkpoint_every=0)


_VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _VERDICTS[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  ({detail})" if detail else ""))
