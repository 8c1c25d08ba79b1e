import math

import numpy as np
import pytest

from gazegan import cgan, dataio
from gazegan import numerics as nx
from gazegan.blinkcodec import BlinkCodecParams
from gazegan.dataio import ALL_DIMS, ClassLabel, NormStats
from gazegan.numerics import Tensor
from gazegan.synthetic import toy_windows

TINY = dict(batch_size=8, g_channels=(4, 4), d_channels=(4, 4), latent_dim=6,
            embed_dim=5, mode="single_dim:E", seed=3)


@pytest.fixture(scope="module")
def codec():
    return BlinkCodecParams.init(np.random.default_rng(0), latent_dim=5, hidden=8).freeze()


@pytest.fixture(scope="module")
def toy():
    frames, labels = toy_windows(8, np.random.default_rng(0))
    stats = dataio.compute_stats(frames)
    return dataio.normalize(frames, stats), labels, stats


def _nets(codec, n_classes=3):
    rng = np.random.default_rng(1)
    g = cgan.Generator.init(rng, n_classes, 6, 5, (4, 4), codec.latent_dim)
    d = cgan.Discriminator.init(rng, n_classes, 5, (4, 4))
    return g, d


def _half_d(d):
    d.params["out_w"].data[:] = 0.0
    d.params["out_b"].data[:] = 0.0
    return d


class TestShapes:
    def test_generator_codomain(self, codec):
        g, _ = _nets(codec)
        out = g.forward(Tensor(np.random.default_rng(0).normal(size=(5, 6))), [0, 1, 2, 0, 1], codec)
        assert out.shape == (5, 4, 300)
        assert np.all(np.abs(out.data) < 1.0)

    def test_generate_window(self, codec):
        g, _ = _nets(codec)
        w = cgan.generate(np.zeros(6), 2, g, codec)
        assert w.shape == (300, 4)

    def test_discriminate_probability(self, codec):
        g, d = _nets(codec)
        p = cgan.discriminate(cgan.generate(np.ones(6), 1, g, codec), 1, d)
        assert 0.0 < p < 1.0

    def test_label_changes_discriminator(self, codec):
        _, d = _nets(codec)
        w = np.random.default_rng(2).uniform(-1, 1, size=(300, 4))
        assert cgan.discriminate(w, 0, d) != cgan.discriminate(w, 2, d)

    def test_bad_label(self, codec):
        g, d = _nets(codec)
        with pytest.raises(ValueError):
            cgan.generate(np.zeros(6), 3, g, codec)
        with pytest.raises(ValueError):
            cgan.discriminate(np.zeros((300, 4)), -1, d)


class TestLosses:
    def test_anchors_at_half(self, codec):
        g, d = _nets(codec)
        _half_d(d)
        rng = np.random.default_rng(0)
        real = Tensor(rng.uniform(-1, 1, size=(4, 4, 300)))
        fake = g.forward(Tensor(rng.normal(size=(4, 6))), [0, 1, 2, 0], codec)
        assert cgan.d_loss(real, fake, [0, 1, 2, 0], d).item() == pytest.approx(
            2 * math.log(2), abs=1e-12)
        z = Tensor(rng.normal(size=(4, 6)))
        assert cgan.g_loss(z, [0, 1, 2, 0], g, d, codec).item() == pytest.approx(
            math.log(2), abs=1e-12)
        assert cgan.g_loss(z, [0, 1, 2, 0], g, d, codec, "minimax").item() == pytest.approx(
            -math.log(2), abs=1e-12)

    def test_batch_mismatch(self, codec):
        g, d = _nets(codec)
        with pytest.raises(ValueError):
            cgan.d_loss(Tensor(np.zeros((2, 4, 300))), Tensor(np.zeros((3, 4, 300))), [0, 0], d)


class TestTrainStep:
    def test_no_gradient_leaks(self, codec, toy):
        x, y, _ = toy
        cfg = cgan.TrainConfig(**TINY)
        st = cgan.init_state(cfg, codec, y)
        d_before = {k: t.data.copy() for k, t in st.d.params.items()}
        g_before = {k: t.data.copy() for k, t in st.g.params.items()}
        codec_before = {k: t.data.copy() for k, t in codec.params.items()}
        real = cgan.discriminator_input(x[:8])

        # discriminator half only: G must not move
        st.opt_d.zero_grad()
        fake = st.g.forward(Tensor(np.zeros((8, 6))), y[:8], codec)
        with nx.GradTape() as tape:
            loss = cgan.d_loss(Tensor(real), fake, y[:8], st.d)
        tape.backward(loss)
        assert all(t.grad is None for t in st.g.params.values())
        assert any(t.grad is not None for t in st.d.params.values())

        cgan.train_step(st, real, y[:8], codec, cfg)
        assert all(np.array_equal(t.data, codec_before[k]) for k, t in codec.params.items())
        assert all(t.grad is None for t in codec.params.values())
        assert any(not np.array_equal(t.data, d_before[k]) for k, t in st.d.params.items())
        assert any(not np.array_equal(t.data, g_before[k]) for k, t in st.g.params.items())
        assert all(t.requires_grad for t in st.d.params.values())

    def test_g_step_leaves_d_untouched(self, codec):
        g, d = _nets(codec)
        for t in d.params.values():
            t.requires_grad = False
        with nx.GradTape() as tape:
            loss = cgan.g_loss(Tensor(np.ones((2, 6))), [0, 1], g, d, codec)
        tape.backward(loss)
        assert all(t.grad is None for t in d.params.values())
        assert g.params["proj_w"].grad is not None
        assert g.params["blink_w"].grad is not None
        assert all(np.any(t.grad != 0) for k, t in g.params.items() if k != "embed")


class TestTraining:
    def test_resume_bit_identical(self, codec, toy, tmp_path):
        x, y, _ = toy
        cfg = cgan.TrainConfig(epochs=3, **TINY)
        straight = cgan.train_gan(x, y, codec, cfg)

        partial = cgan.train_gan(x, y, codec, cfg, epochs=2)
        cgan.save_state(partial, cfg, tmp_path)
        resumed, cfg2 = cgan.load_state(tmp_path, codec)
        assert cfg2 == cfg
        resumed = cgan.train_gan(x, y, codec, cfg2, state=resumed)

        assert resumed.log == straight.log
        for k, t in straight.g.params.items():
            np.testing.assert_array_equal(resumed.g.params[k].data, t.data)
        for k, t in straight.d.params.items():
            np.testing.assert_array_equal(resumed.d.params[k].data, t.data)

    def test_same_seed_same_hashes(self, codec, toy, tmp_path):
        x, y, _ = toy
        cfg = cgan.TrainConfig(epochs=2, checkpoint_every=1, **TINY)
        a = cgan.train_gan(x, y, codec, cfg, tmp_path / "a")
        b = cgan.train_gan(x, y, codec, cfg, tmp_path / "b")
        assert a.log == b.log
        for name in ("generator.ggan", "discriminator.ggan"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_losses_finite(self, codec, toy):
        x, y, _ = toy
        st = cgan.train_gan(x, y, codec, cgan.TrainConfig(epochs=2, **TINY))
        assert len(st.log) == 2
        assert all(math.isfinite(e["d_loss"]) and math.isfinite(e["g_loss"]) for e in st.log)
        assert st.log[0]["steps"] == len(x) // 8

    def test_empty(self, codec):
        with pytest.raises(ValueError):
            cgan.train_gan(np.zeros((0, 300, 4)), np.zeros(0, int), codec, cgan.TrainConfig(**TINY))

    def test_divergence_writes_diagnostic(self, codec, toy, tmp_path):
        x, y, _ = toy
        bad = x.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(cgan.TrainingDivergedError) as err:
            cgan.train_gan(bad, y, codec, cgan.TrainConfig(epochs=1, **TINY), tmp_path)
        assert (err.value.checkpoint_dir / "generator.ggan").exists()

    def test_empirical_labels_only_seen(self, codec, toy):
        x, y, _ = toy
        keep = y != 1
        cfg = cgan.TrainConfig(epochs=1, **{**TINY, "mode": "all_dims"}, fake_labels="empirical")
        st = cgan.init_state(cfg, codec, y[keep] * 100)
        draws = cgan._sample_fake_labels(st, 500)
        assert set(np.unique(draws)) == {0, 200}


class TestSynthesis:
    def test_device_space(self, codec):
        g, _ = _nets(codec)
        stats = NormStats(2.0, 6.0)
        out = cgan.synthesize_batch(7, 1, g, codec, stats, np.random.default_rng(0), chunk=3)
        assert out.shape == (7, 300, 4)
        assert np.all((out[..., :2] >= 0) & (out[..., :2] <= 1))
        assert np.all((out[..., 2] > 2.0) & (out[..., 2] < 6.0))
        assert set(np.unique(out[..., 3])) <= {0.0, 1.0}

    def test_unseen_class_accepted(self, codec):
        rng = np.random.default_rng(0)
        g = cgan.Generator.init(rng, 243, 6, 5, (4, 4), codec.latent_dim)
        out = cgan.synthesize_batch(2, ClassLabel(ALL_DIMS, 194), g, codec, NormStats(2, 5), rng)
        assert out.shape == (2, 300, 4)
        with pytest.raises(ValueError):
            cgan.synthesize_batch(1, 243, g, codec, NormStats(2, 5), rng)

    def test_seeded_repeatable(self, codec):
        g, _ = _nets(codec)
        a = cgan.synthesize_batch(3, 0, g, codec, NormStats(2, 5), np.random.default_rng(5))
        b = cgan.synthesize_batch(3, 0, g, codec, NormStats(2, 5), np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_discriminator_input_blink_scale(self):
        w = np.zeros((1, 300, 4))
        w[0, :10, 3] = 1
        d = cgan.discriminator_input(w)
        assert d.shape == (1, 4, 300)
        assert set(np.unique(d[0, 3])) == {-1.0, 1.0}
