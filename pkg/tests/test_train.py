import numpy as np
import pytest

from cyclespec import losses as L
from cyclespec import train as TR
from cyclespec.data import speech_like
from cyclespec.errors import ConfigError, DataError, StateError
from cyclespec.losses import LossWeights
from cyclespec.tensor import Tensor


@pytest.fixture(scope="module")
def toy():
    """Four utterances exactly one crop long, so every epoch sees the same batch."""
    rng = np.random.default_rng(0)
    return [speech_like(rng, 2048) for _ in range(4)]


def _cfg(**kw):
    base = dict(fae_epochs=2, dae_epochs=2, batch=4, checkpoint_every=0)
    base.update(kw)
    return TR.desk_config(**base)


def _arrays(net):
    return {k: v.data.copy() for k, v in net.params.items()}


class TestConfig:
    def test_paper_defaults(self):
        cfg = TR.TrainConfig()
        assert (cfg.lr, cfg.batch, cfg.fae_epochs, cfg.dae_epochs) == (1e-3, 20, 700, 1500)
        assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)

    def test_ccc_needs_phase(self):
        with pytest.raises(ConfigError):
            TR.TrainConfig(phase_aware=False, ccc=True)


class TestFae:
    def test_descends_on_fixed_batch(self, toy):
        phase = TR.train_fae(toy, _cfg())
        (_, first), (_, second) = phase.history
        assert second.J_total < first.J_total

    def test_zero_lr_keeps_params(self, toy):
        cfg = _cfg(lr=0.0)
        start, _ = TR.new_fae_phase(cfg)
        phase = TR.train_fae(toy, cfg)
        before = _arrays(start.net)
        assert all(phase.net.params[k].data.tobytes() == v.tobytes() for k, v in before.items())

    def test_all_toggles_off_is_amplitude_only_single_resolution(self, toy):
        cfg = _cfg(multi_resolution=False, phase_aware=False, ccc=False)
        phase = TR.train_fae(toy, cfg)
        assert phase.net.config.windows == (1024,)
        assert not any(k.startswith("D12") for k in phase.net.params)
        assert all(r.J_Sp == 0.0 and r.J_a2p == 0.0 for _, r in phase.history)

    def test_report_terms_combine(self, toy):
        phase = TR.train_fae(toy, _cfg(fae_epochs=1))
        r = phase.history[0][1]
        w = LossWeights()
        j_s = r.J_Sa + r.J_Sp
        assert r.J_total == pytest.approx(w.theta2 * r.J_KL + j_s + r.J_cyc, rel=1e-12)
        assert r.J_cyc >= j_s

    def test_empty_clean_set(self):
        with pytest.raises(DataError):
            TR.train_fae([], _cfg())


class TestCcc:
    def _planes(self, rng, n):
        return [Tensor(np.abs(rng.standard_normal((2, b, 33)))) for b in (513, 257, 129, 65)][:n]

    def test_epoch_one_is_base_losses(self, toy):
        rng = np.random.default_rng(2)
        cfg = _cfg()
        phase, _ = TR.new_fae_phase(cfg)
        ta, tp, ra, rp = (self._planes(rng, 4) for _ in range(4))
        res, state = TR.ccc_step(phase.net, ta, tp, ra, rp, TR.CCCState(), 0.5, epoch=1)
        assert res.amplitude.item() == L.amplitude_loss(ta, ra).item()
        assert res.phase.item() == L.phase_loss(tp, rp).item()
        assert res.bc_phase is None and state.bc_phase is None
        with pytest.raises(StateError):
            TR.ccc_step(phase.net, ta, tp, ra, rp, TR.CCCState(), 0.5, epoch=1, require_bc=True)

    def test_bc_banks_match_reconstructions(self):
        rng = np.random.default_rng(3)
        phase, _ = TR.new_fae_phase(_cfg())
        ta, tp, ra, rp = (self._planes(rng, 4) for _ in range(4))
        res, state = TR.ccc_step(phase.net, ta, tp, ra, rp, TR.CCCState(), 0.5, epoch=2)
        assert [b.shape for b in state.bc_phase] == [p.shape for p in rp]
        assert [b.shape for b in state.bc_amplitude] == [a.shape for a in ra]
        assert res.phase.item() == pytest.approx(res.base_phase.item() + 0.5 * res.bc_phase.item(), rel=1e-14)
        assert res.amplitude.item() == pytest.approx(
            res.base_amplitude.item() + 0.5 * res.bc_amplitude.item(), rel=1e-14)

    def test_theta1_zero_matches_ccc_off(self, toy):
        w = LossWeights(theta1=0.0)
        on = TR.train_fae(toy, _cfg(fae_epochs=3, weights=w, ccc=True))
        off = TR.train_fae(toy, _cfg(fae_epochs=3, weights=w, ccc=False))
        for k, v in on.net.params.items():
            np.testing.assert_allclose(v.data, off.net.params[k].data, rtol=0, atol=1e-12)


@pytest.fixture(scope="module")
def fae(toy):
    return TR.train_fae(toy, _cfg()).net


class TestDae:
    def test_fae_frozen(self, toy, fae):
        before = _arrays(fae)
        TR.train_dae(toy, fae, _cfg())
        assert all(fae.params[k].data.tobytes() == v.tobytes() for k, v in before.items())

    def test_zero_lr(self, toy, fae):
        cfg = _cfg(lr=0.0)
        start, _ = TR.new_dae_phase(cfg, fae)
        phase = TR.train_dae(toy, fae, cfg)
        assert all(phase.net.params[k].data.tobytes() == v.data.tobytes() for k, v in start.net.params.items())

    def test_decoders_start_from_fae(self, toy, fae):
        start, _ = TR.new_dae_phase(_cfg(), fae)
        for k, v in fae.subset("D12").items():
            assert start.net.params["D22" + k[3:]].data.tobytes() == v.data.tobytes()

    def test_descends_over_five_epochs(self, toy, fae):
        phase = TR.train_dae(toy, fae, _cfg(dae_epochs=5))
        totals = [r.J_total for _, r in phase.history]
        assert totals[-1] < totals[0]

    def test_missing_fae(self, toy):
        with pytest.raises(StateError):
            TR.train_dae(toy, None, _cfg())


class TestOrchestration:
    def test_overlap_rejected(self, toy):
        with pytest.raises(DataError):
            TR.train_full(toy, toy, _cfg(), clean_ids=["a", "b"], mixture_ids=["b", "c"])

    def test_checkpoints_and_reports(self, toy, tmp_path):
        cfg = _cfg(fae_epochs=4, dae_epochs=2, checkpoint_every=2)
        result = TR.train_full(toy, toy[:2], cfg, tmp_path)
        names = sorted(p.relative_to(tmp_path).as_posix() for p in result.checkpoints)
        assert names == ["checkpoints/dae-e0002.ckpt", "checkpoints/fae-e0002.ckpt",
                         "checkpoints/fae-e0004.ckpt", "dae.ckpt", "fae.ckpt"]
        back = L.read_report_csv(tmp_path / "fae_losses.csv")
        assert back == dict(result.fae_history)

    def test_save_load_round_trip(self, toy, tmp_path):
        phase = TR.train_fae(toy, _cfg(fae_epochs=1))
        TR.save_net(tmp_path / "f.ckpt", phase.net, _cfg())
        net = TR.load_net(tmp_path / "f.ckpt")
        assert net.config == phase.net.config
        assert all(net.params[k].data.tobytes() == v.data.tobytes() for k, v in phase.net.params.items())
        side = (tmp_path / "f.ckpt.txt").read_text()
        assert "latent_dim=8" in side and "seed=0" in side

    def test_load_missing(self, tmp_path):
        with pytest.raises(StateError):
            TR.load_net(tmp_path / "none.ckpt")

    def test_deterministic(self, toy, tmp_path):
        cfg = _cfg(seed=11)
        a = TR.train_full(toy, toy, cfg, tmp_path / "a")
        b = TR.train_full(toy, toy, cfg, tmp_path / "b")
        for name in ("fae.ckpt", "dae.ckpt", "fae_losses.csv", "dae_losses.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert a.fae_history == b.fae_history


def test_clip_gradients():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    norm = TR.clip_gradients(grads, 1.0)
    assert norm == 5.0
    assert np.sqrt(sum(np.sum(g ** 2) for g in grads.values())) == pytest.approx(1.0)
    small = {"a": np.array([0.1])}
    TR.clip_gradients(small, 1.0)
    assert small["a"][0] == 0.1
