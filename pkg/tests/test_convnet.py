"""ConvNet tests: shapes, initialization statistics, training behaviour, I/O."""

import numpy as np
import pytest
from conftest import fd_gradcheck

from condenset import convnet, tensor as T
from condenset.errors import ConfigError, DataFormatError, ShapeError


def tiny_config(**kw):
    base = dict(depth=1, width=2, in_channels=1, input_hw=4, num_classes=3)
    base.update(kw)
    return convnet.ConvNetConfig(**base)


class TestConfig:
    def test_feature_dim_formula(self):
        cases = [
            (convnet.ConvNetConfig(depth=3, width=128, input_hw=32), 128 * 4 * 4),
            (convnet.ConvNetConfig(depth=3, width=64, input_hw=16), 64 * 2 * 2),
            (convnet.ConvNetConfig(depth=2, width=32, input_hw=16), 32 * 4 * 4),
            (convnet.ConvNetConfig(depth=1, width=5, input_hw=8), 5 * 4 * 4),
        ]
        for cfg, expected in cases:
            assert cfg.feature_dim == expected

    def test_indivisible_extent_rejected(self):
        with pytest.raises(ConfigError):
            convnet.ConvNetConfig(depth=3, input_hw=20)

    def test_invalid_width_rejected(self):
        with pytest.raises(ConfigError):
            convnet.ConvNetConfig(width=0)


class TestInit:
    def test_deterministic_under_seed(self):
        cfg = tiny_config()
        a = convnet.init_params(cfg, seed=7)
        b = convnet.init_params(cfg, seed=7)
        for (n1, t1), (n2, t2) in zip(a.named(), b.named()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_norm_affine_starts_at_identity(self):
        params = convnet.init_params(tiny_config(depth=2, input_hw=8), seed=0)
        np.testing.assert_array_equal(params.tensors["block0.norm.gamma"].data, 1.0)
        np.testing.assert_array_equal(params.tensors["block1.norm.beta"].data, 0.0)

    def test_he_scaling_of_first_conv(self):
        cfg = convnet.ConvNetConfig(depth=3, width=128, in_channels=3, input_hw=32)
        target = np.sqrt(2.0 / (3 * 9))
        stds = []
        for seed in range(5):
            params = convnet.init_params(cfg, seed=seed)
            stds.append(params.tensors["block0.conv.w"].data.std())
        mean_std = np.mean(stds)
        assert abs(mean_std - target) / target < 0.2


class TestForward:
    def test_embed_shapes(self):
        cfg = convnet.ConvNetConfig(depth=3, width=64, in_channels=3, input_hw=16)
        params = convnet.init_params(cfg, seed=0)
        out = convnet.embed(params, T.Tensor(np.zeros((2, 3, 16, 16), dtype=np.float32)))
        assert out.shape == (2, 256)

    def test_logits_shape_and_duplicate_rows(self):
        cfg = tiny_config()
        params = convnet.init_params(cfg, seed=1)
        rng = np.random.default_rng(0)
        img = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
        batch = np.concatenate([img, img], axis=0)
        out = convnet.logits(params, T.Tensor(batch))
        assert out.shape == (2, 3)
        np.testing.assert_allclose(out.data[0], out.data[1], rtol=1e-5)

    def test_wrong_spatial_extent_raises(self):
        params = convnet.init_params(tiny_config(), seed=0)
        with pytest.raises(ShapeError):
            convnet.embed(params, T.Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32)))

    def test_untrained_accuracy_is_near_chance(self):
        cfg = convnet.ConvNetConfig(depth=2, width=8, in_channels=1, input_hw=8, num_classes=4)
        rng = np.random.default_rng(3)
        images = rng.normal(size=(400, 1, 8, 8)).astype(np.float32)
        labels = np.repeat(np.arange(4), 100)
        accs = [
            convnet.accuracy(convnet.init_params(cfg, seed=s), images, labels)
            for s in range(5)
        ]
        assert abs(np.mean(accs) - 0.25) < 0.10

    def test_input_gradients_match_finite_differences(self):
        cfg = tiny_config()
        params = convnet.init_params(cfg, seed=2)
        # float64 copies for a stable finite-difference check
        params64 = convnet.ConvNetParams(
            cfg,
            {k: T.Tensor(v.data.astype(np.float64), requires_grad=True)
             for k, v in params.tensors.items()},
        )
        rng = np.random.default_rng(4)
        x = T.Tensor(rng.normal(size=(2, 1, 4, 4)), requires_grad=True)
        with T.frozen(params64.parameters()):
            fd_gradcheck(lambda: T.sum_squares(convnet.logits(params64, x)), [x])


class TestTraining:
    def _toy_batch(self, cfg, n=8, seed=0):
        rng = np.random.default_rng(seed)
        images = rng.normal(size=(n, cfg.in_channels, cfg.input_hw, cfg.input_hw))
        labels = rng.integers(0, cfg.num_classes, size=n)
        return images.astype(np.float32), labels

    def test_overfits_one_batch(self):
        cfg = convnet.ConvNetConfig(depth=2, width=32, in_channels=1, input_hw=8, num_classes=4)
        params = convnet.init_params(cfg, seed=5)
        images, labels = self._toy_batch(cfg, n=8, seed=6)
        state = T.SgdState(lr=0.01, momentum=0.9, weight_decay=5e-4)
        losses = [convnet.train_step(params, state, images, labels) for _ in range(50)]
        assert all(np.isfinite(losses))
        assert losses[-1] < 0.05

    def test_zero_lr_leaves_parameters_unchanged(self):
        cfg = tiny_config()
        params = convnet.init_params(cfg, seed=7)
        before = {k: v.data.copy() for k, v in params.tensors.items()}
        images, labels = self._toy_batch(cfg, n=4, seed=8)
        state = T.SgdState(lr=1e-30)  # lr must be positive; effectively zero
        convnet.train_step(params, state, images, labels)
        for k, v in params.tensors.items():
            np.testing.assert_allclose(v.data, before[k], atol=1e-20)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = convnet.ConvNetConfig(depth=2, width=4, in_channels=3, input_hw=8, num_classes=5)
        params = convnet.init_params(cfg, seed=9)
        path = tmp_path / "net.ckpt"
        convnet.save_params(path, params)
        loaded = convnet.load_params(path)
        assert loaded.config == cfg
        for (n1, t1), (n2, t2) in zip(params.named(), loaded.named()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_truncated_payload_rejected(self, tmp_path):
        cfg = tiny_config()
        params = convnet.init_params(cfg, seed=0)
        path = tmp_path / "net.ckpt"
        convnet.save_params(path, params)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataFormatError):
            convnet.load_params(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"\x00\x01\x02 not json\n1234")
        with pytest.raises(DataFormatError):
            convnet.load_params(path)
