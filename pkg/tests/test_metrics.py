import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclespec import metrics as E
from cyclespec.dsp import stft_array
from cyclespec.errors import InputError, IoError, ShapeError


def oracle_sdr(s, e):
    num = sum(float(v) ** 2 for v in s)
    den = sum((float(a) - float(b)) ** 2 for a, b in zip(s, e))
    return 10 * np.log10(num / den)


def oracle_si_sdr(s, e):
    alpha = sum(float(a) * float(b) for a, b in zip(e, s)) / sum(float(v) ** 2 for v in s)
    target = [alpha * float(v) for v in s]
    resid = [float(b) - t for b, t in zip(e, target)]
    return 10 * np.log10(sum(t * t for t in target) / sum(r * r for r in resid))


def oracle_lsd(s, e, window=1024, hop=32):
    rs, re = np.abs(stft_array(s, window, hop, window)), np.abs(stft_array(e, window, hop, window))
    frames = []
    for n in range(rs.shape[1]):
        acc = 0.0
        for k in range(rs.shape[0]):
            d = 20 * (np.log10(rs[k, n] + 1e-10) - np.log10(re[k, n] + 1e-10))
            acc += d * d
        frames.append(acc / rs.shape[0])
    return float(np.sqrt(np.mean(frames)))


class TestSdr:
    def test_identical_is_capped(self, rng):
        s = rng.standard_normal(500)
        assert E.sdr(s, s) == 60.0

    def test_one_percent_noise(self, rng):
        s = rng.standard_normal(1000)
        n = rng.standard_normal(1000)
        n *= np.sqrt(np.sum(s ** 2) / 100 / np.sum(n ** 2))
        assert E.sdr(s, s + n) == pytest.approx(20.0, abs=1e-10)

    def test_random_pair_oracle(self, rng):
        s, e = rng.standard_normal(300), rng.standard_normal(300)
        assert E.sdr(s, e) == pytest.approx(oracle_sdr(s, e), abs=1e-10)

    def test_errors(self, rng):
        with pytest.raises(ShapeError):
            E.sdr(np.ones(4), np.ones(5))
        with pytest.raises(InputError):
            E.sdr(np.zeros(4), np.ones(4))

    def test_monotone_in_noise_power(self, rng):
        s, n = rng.standard_normal(800), rng.standard_normal(800)
        values = [E.sdr(s, s + g * n) for g in (0.01, 0.1, 0.5, 1.0, 3.0)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestSiSdr:
    @pytest.mark.parametrize("c", [3.7, -0.2, 1e-3])
    def test_scale_invariance(self, rng, c):
        s = rng.standard_normal(400)
        assert E.si_sdr(s, c * s) == 60.0

    def test_orthogonal_floor(self):
        s = np.array([1.0, 0.0, 1.0, 0.0])
        e = np.array([0.0, 1.0, 0.0, 1.0])
        assert E.si_sdr(s, e) == -60.0

    def test_random_pair_oracle(self, rng):
        s, e = rng.standard_normal(300), rng.standard_normal(300) + 0.5 * rng.standard_normal(300)
        assert E.si_sdr(s, e) == pytest.approx(oracle_si_sdr(s, e), abs=1e-10)

    def test_zero_estimate(self, rng):
        with pytest.raises(InputError):
            E.si_sdr(rng.standard_normal(10), np.zeros(10))


class TestLsd:
    def test_identical(self, rng):
        s = rng.standard_normal(3000)
        assert E.lsd(s, s) == 0.0

    def test_tenfold_gain(self, rng):
        s = rng.standard_normal(3000)
        assert E.lsd(s, 10 * s) == pytest.approx(20.0, abs=1e-6)

    def test_random_pair_oracle(self, rng):
        s, e = rng.standard_normal(1500), rng.standard_normal(1500)
        assert E.lsd(s, e) == pytest.approx(oracle_lsd(s, e), rel=1e-12)

    def test_silence_is_finite(self):
        assert np.isfinite(E.lsd(np.zeros(2048), np.ones(2048)))


class TestReport:
    def _rows(self):
        return [E.MetricRow("a", 0.0, "babble", 1.0, 2.0, 3.0, 0.5),
                E.MetricRow("b", 0.0, "babble", 3.0, 4.0, 5.0, 1.5),
                E.MetricRow("c", 5.0, "cafe", 7.0, 8.0, 9.0, 4.0)]

    def test_cells_partition_rows(self):
        report = E.MetricReport(self._rows())
        cells = report.cells()
        assert sorted(cells) == [(0.0, "babble"), (5.0, "cafe")]
        assert sum(len(v) for v in cells.values()) == 3

    def test_aggregate_means(self):
        agg = E.MetricReport(self._rows()).aggregates()
        assert agg[(0.0, "babble")]["sdr_db"] == 2.0
        assert agg[(0.0, "babble")]["lsd_db"] == 4.0
        assert agg[(5.0, "cafe")]["sdr_db"] == 7.0
        assert E.MetricReport(self._rows()).mean("sdr_db", snr_db=0.0) == 2.0

    def test_csv_and_jsonl(self, tmp_path):
        report = E.MetricReport(self._rows())
        report.write_csv(tmp_path / "m.csv")
        back = E.read_aggregate_csv(tmp_path / "m.csv")
        assert back[(0.0, "babble")]["count"] == 2
        assert back[(0.0, "babble")]["si_sdr_db"] == 3.0
        report.write_jsonl(tmp_path / "m.jsonl")
        lines = [json.loads(x) for x in (tmp_path / "m.jsonl").read_text().splitlines()]
        assert [x["id"] for x in lines] == ["a", "b", "c"]


class TestEvaluateSet:
    def test_passthrough_reproduces_input_sdr(self, tiny_corpus):
        report = E.evaluate_set(tiny_corpus, lambda m: m)
        for row in report.rows:
            assert row.sdr_db == row.input_sdr_db
            assert row.sdr_db == pytest.approx(row.snr_db, abs=0.05)

    def test_cell_count(self, tiny_corpus):
        report = E.evaluate_set(tiny_corpus, lambda m: m, workers=2)
        assert len(report.aggregates()) == 2 * 2

    def test_filters(self, tiny_corpus):
        report = E.evaluate_set(tiny_corpus, lambda m: m, noise_kind="stationary", snrs=(5.0,))
        assert {(r.snr_db, r.noise_kind) for r in report.rows} == {(5.0, "stationary")}

    def test_missing_file(self, tiny_corpus, tmp_path):
        from cyclespec.data import Manifest
        entries = list(tiny_corpus.entries)
        victim = next(e for e in entries if e.role == "mixture" and e.split == "test")
        moved = Manifest([e if e is not victim else type(e)(e.id, "nowhere.wav", e.role, e.split, e.snr_db,
                                                             e.noise_kind, e.source) for e in entries],
                         root=tiny_corpus.root)
        with pytest.raises(IoError, match=re.escape(victim.id)):
            E.evaluate_set(moved, lambda m: m)


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 400), st.integers(0, 2 ** 32 - 1))
def test_metrics_never_nan(n, seed):
    rng = np.random.default_rng(seed)
    s, e = rng.standard_normal(n), rng.standard_normal(n) * rng.uniform(0, 2)
    assert np.isfinite(E.sdr(s, e))
    if np.any(e):
        assert -60.0 <= E.si_sdr(s, e) <= 60.0
