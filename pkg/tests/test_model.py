import numpy as np
import pytest

from cyclespec import model as M
from cyclespec import tensor as T
from cyclespec.dsp import BANK_WINDOWS, aligned_bank
from cyclespec.errors import InputError, ShapeError, StateError
from cyclespec.tensor import GradientTape, Tensor
from cyclespec.train import CCCState, desk_config, fae_objective, stack_banks

DESK = M.fae_config(1 / 8)


def _bank(rng, n_frames=6, batch=2, windows=BANK_WINDOWS):
    return [(Tensor(np.abs(rng.standard_normal((batch, w // 2 + 1, n_frames)))),
             Tensor(rng.standard_normal((batch, w // 2 + 1, n_frames)))) for w in windows]


def _zeroed(params):
    return {k: Tensor(np.zeros(v.shape)) for k, v in params.items()}


class TestSchedules:
    def test_paper_schedules(self):
        assert M.FAE_SCHEDULE == (512, 256, 128, 64)
        assert M.DAE_SCHEDULE == (512, 400, 300, 200, 100, 64)
        assert M.ModelConfig().latent_dim == 64
        assert M.ModelConfig().kernel == 7

    def test_desk_preset_is_one_eighth(self):
        assert DESK.enc_schedule == (64, 32, 16, 8)
        assert M.dae_encoder_schedule(1 / 8) == (64, 50, 38, 25, 12, 8)


class TestEncoder:
    def test_zero_params_zero_bank(self, rng):
        params = _zeroed(M.init_encoder(DESK, rng, "E"))
        zeros = [(Tensor(np.zeros((1, w // 2 + 1, 5))), Tensor(np.zeros((1, w // 2 + 1, 5)))) for w in BANK_WINDOWS]
        enc = M.encode(DESK, params, "E", zeros)
        assert not np.any(enc.mean.data) and not np.any(enc.log_variance.data)

    @pytest.mark.parametrize("n_frames", [1, 4, 33])
    def test_latent_shape(self, rng, n_frames):
        cfg = M.ModelConfig(enc_schedule=(16, 64), dec_schedule=(64, 16), windows=(16, 8))
        enc = M.encode(cfg, M.init_encoder(cfg, rng, "E"), "E", _bank(rng, n_frames, 3, cfg.windows))
        assert enc.mean.shape == (3, 64, n_frames)
        assert enc.log_variance.shape == (3, 64, n_frames)

    def test_full_scale_latent(self, rng):
        cfg = M.ModelConfig()
        enc = M.encode(cfg, M.init_encoder(cfg, rng, "E"), "E", _bank(rng, 3, 1))
        assert enc.mean.shape == (1, 64, 3)

    def test_wrong_bank_size(self, rng):
        with pytest.raises(ShapeError):
            M.encode(DESK, M.init_encoder(DESK, rng, "E"), "E", _bank(rng)[:3])


class TestSampleLatent:
    def test_zero_noise_gives_mean(self, rng):
        m, lv = rng.standard_normal((1, 8, 4)), rng.standard_normal((1, 8, 4))
        z = M.sample_latent(Tensor(m), Tensor(lv), Tensor(np.zeros_like(m)))
        np.testing.assert_array_equal(z.data, m)

    def test_unit_variance_adds_noise(self, rng):
        m, n = rng.standard_normal((1, 8, 4)), rng.standard_normal((1, 8, 4))
        z = M.sample_latent(Tensor(m), Tensor(np.zeros_like(m)), Tensor(n))
        np.testing.assert_allclose(z.data, m + n, atol=1e-15)

    def test_gradient(self, rng):
        inputs = [rng.standard_normal((1, 3, 4)) for _ in range(3)]
        assert T.gradcheck(M.sample_latent, inputs, rng=rng) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            M.sample_latent(Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 2, 4))))


class TestDecoders:
    def test_plane_shapes_and_non_negativity(self, rng):
        params = M.init_decoder(DESK, rng, "A") | M.init_decoder(DESK, rng, "P")
        z = Tensor(5.0 * rng.standard_normal((2, 8, 7)))
        amps = M.decode_amplitude(DESK, params, "A", z)
        phases = M.decode_phase(DESK, params, "P", z)
        assert [a.shape for a in amps] == [(2, b, 7) for b in (513, 257, 129, 65)]
        assert [p.shape for p in phases] == [a.shape for a in amps]
        assert all(np.all(a.data >= 0) for a in amps)

    def test_zero_params(self, rng):
        params = _zeroed(M.init_decoder(DESK, rng, "A"))
        z = Tensor(rng.standard_normal((1, 8, 4)))
        for a in M.decode_amplitude(DESK, params, "A", z):
            np.testing.assert_allclose(a.data, np.log(2.0), rtol=1e-15)
        for p in M.decode_phase(DESK, params, "A", z):
            assert not np.any(p.data)

    def test_latent_receives_gradient(self, rng):
        params = M.init_decoder(DESK, rng, "P")
        z = Tensor(rng.standard_normal((1, 8, 5)), requires_grad=True)
        with GradientTape() as tape:
            loss = T.sum(T.square(M.decode_phase(DESK, params, "P", z)[2]))
        g = T.backward(tape, loss)[z]
        assert np.any(g != 0)
        fn = lambda zz: M.decode_phase(DESK, params, "P", zz)[1]  # noqa: E731
        assert T.gradcheck(fn, [z.data], rng=rng) < 1e-4

    def test_channel_mismatch(self, rng):
        params = M.init_decoder(DESK, rng, "A")
        with pytest.raises(ShapeError):
            M.decode_amplitude(DESK, params, "A", Tensor(np.zeros((1, 9, 4))))

    def test_heads_limit(self, rng):
        params = M.init_decoder(DESK, rng, "A")
        assert len(M.decode_amplitude(DESK, params, "A", Tensor(np.zeros((1, 8, 4))), heads=1)) == 1


def test_every_parameter_gets_gradient(rng):
    cfg = desk_config()
    net = M.init_fae(cfg.model_config(), rng)
    signals = [rng.standard_normal(2048) * 0.1 for _ in range(2)]
    bank = stack_banks([aligned_bank(s) for s in signals])
    noise = rng.standard_normal((2, 8, bank[0][0].shape[-1]))
    with GradientTape() as tape:
        total, _, _ = fae_objective(net, bank, noise, cfg, 2, CCCState())
    grads = T.backward(tape, total)
    dead = [k for k, p in net.params.items() if not np.any(grads.get(p, 0.0))]
    assert dead == []


def test_deterministic_forward(rng):
    cfg = desk_config()
    net = M.init_fae(cfg.model_config(), rng)
    bank = stack_banks([aligned_bank(rng.standard_normal(2048))])
    noise = np.zeros((1, 8, bank[0][0].shape[-1]))
    a = fae_objective(net, bank, noise, cfg, 1, CCCState())[1]
    b = fae_objective(net, bank, noise, cfg, 1, CCCState())[1]
    assert a == b


@pytest.fixture(scope="module")
def nets():
    """Untrained (DAE, FAE) pair at desk widths."""
    rng = np.random.default_rng(5)
    cfg = desk_config()
    fae = M.init_fae(cfg.model_config(), rng)
    return M.init_dae(cfg.dae_model_config(), rng, fae), fae


class TestEnhance:
    @pytest.mark.parametrize("n", [1024, 3000, 8000])
    def test_length_and_determinism(self, nets, n):
        x = np.random.default_rng(n).standard_normal(n) * 0.1
        a = M.enhance(x, *nets)
        b = M.enhance(x, *nets)
        assert a.shape == x.shape
        assert a.tobytes() == b.tobytes()
        assert np.all(np.isfinite(a))

    def test_missing_models(self, nets):
        dae, fae = nets
        with pytest.raises(StateError):
            M.enhance(np.zeros(2048), None, fae)
        with pytest.raises(StateError):
            M.enhance(np.zeros(2048), fae, dae)  # roles swapped

    def test_too_short(self, nets):
        with pytest.raises(InputError):
            M.enhance(np.zeros(500), *nets)

    def test_dae_decoders_copy_fae(self, nets):
        dae, fae = nets
        for k, v in fae.subset("D11").items():
            assert dae.params["D21" + k[3:]].data.tobytes() == v.data.tobytes()
