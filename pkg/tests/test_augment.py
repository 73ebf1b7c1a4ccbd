"""Augmentation tests: partition geometry, shared randomness, gradients."""

import numpy as np
import pytest
from conftest import fd_gradcheck

from condenset import augment, tensor as T
from condenset.augment import PartitionSpec, dsa_augment, partition_expand
from condenset.errors import ShapeError


def batch64(shape, seed=0):
    rng = np.random.default_rng(seed)
    return T.Tensor(rng.normal(size=shape).astype(np.float64))


class TestPartitionExpand:
    def test_factor_one_is_identity(self):
        x = batch64((3, 2, 8, 8))
        out = partition_expand(x, PartitionSpec(1))
        np.testing.assert_array_equal(out.data, x.data)

    def test_output_count_is_l_squared_times_batch(self):
        x = batch64((5, 3, 32, 32))
        out = partition_expand(x, PartitionSpec(2))
        assert out.shape == (20, 3, 32, 32)

    def test_constant_image_stays_constant(self):
        x = T.Tensor(np.full((2, 1, 8, 8), 0.6))
        out = partition_expand(x, PartitionSpec(2))
        np.testing.assert_allclose(out.data, 0.6, rtol=1e-12)

    def test_indivisible_extent_rejected(self):
        with pytest.raises(ShapeError):
            partition_expand(batch64((1, 1, 9, 8)), PartitionSpec(2))

    def test_output_ordering_image_major_then_tile_row_major(self):
        # distinct constant quadrants make the tile order observable
        x = np.zeros((2, 1, 4, 4))
        for b in range(2):
            x[b, 0, :2, :2] = 10 * b + 1  # tile (0,0)
            x[b, 0, :2, 2:] = 10 * b + 2  # tile (0,1)
            x[b, 0, 2:, :2] = 10 * b + 3  # tile (1,0)
            x[b, 0, 2:, 2:] = 10 * b + 4  # tile (1,1)
        out = partition_expand(T.Tensor(x), PartitionSpec(2))
        got = [float(out.data[i].mean()) for i in range(8)]
        np.testing.assert_allclose(got, [1, 2, 3, 4, 11, 12, 13, 14], rtol=1e-9)

    def test_per_tile_mean_preserved(self):
        for l in (1, 2, 4):
            x = batch64((2, 3, 16, 16), seed=l)
            out = partition_expand(x, PartitionSpec(l))
            th = 16 // l
            idx = 0
            for b in range(2):
                for i in range(l):
                    for j in range(l):
                        tile = x.data[b, :, i * th : (i + 1) * th, j * th : (j + 1) * th]
                        got = out.data[idx].mean()
                        assert abs(got - tile.mean()) < 1e-5
                        idx += 1

    def test_tiles_cover_source_without_overlap(self):
        # perturbing any single source pixel changes exactly one output image:
        # the tile containing it (coverage), and no other tile (no overlap)
        base = np.arange(1 * 1 * 4 * 4, dtype=np.float64).reshape(1, 1, 4, 4)
        for l in (1, 2):
            th = 4 // l
            ref = partition_expand(T.Tensor(base), PartitionSpec(l)).data
            for r in range(4):
                for c in range(4):
                    bumped = base.copy()
                    bumped[0, 0, r, c] += 1.0
                    out = partition_expand(T.Tensor(bumped), PartitionSpec(l)).data
                    changed = [
                        i for i in range(l * l)
                        if not np.array_equal(out[i], ref[i])
                    ]
                    assert changed == [(r // th) * l + (c // th)]

    def test_gradients_flow_to_own_tile_only(self):
        x = T.Tensor(np.random.default_rng(0).normal(size=(1, 1, 4, 4)), requires_grad=True)
        out = partition_expand(x, PartitionSpec(2))
        # loss touches only tile 3 (bottom-right) of image 0
        T.backward(T.sum_squares(T.narrow0(out, 3, 1)))
        g = x.grad
        assert np.all(g[0, 0, :2, :]) == 0 or np.allclose(g[0, 0, :2, :], 0)
        assert np.allclose(g[0, 0, :, :2], 0)
        assert np.abs(g[0, 0, 2:, 2:]).sum() > 0

    def test_gradcheck(self):
        x = batch64((2, 1, 4, 4), seed=3)
        x.requires_grad = True
        fd_gradcheck(lambda: T.sum_squares(partition_expand(x, PartitionSpec(2))), [x])


class TestDsaAugment:
    def test_shared_randomness_same_transform(self):
        base = np.random.default_rng(1).normal(size=(3, 2, 8, 8))
        real = T.Tensor(base.copy())
        syn = T.Tensor(base.copy())
        for seed in range(6):
            ar, asyn = dsa_augment(real, syn, seed)
            np.testing.assert_array_equal(ar.data, asyn.data)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            dsa_augment(T.Tensor(np.zeros((2, 3, 8, 8))), T.Tensor(np.zeros((2, 3, 4, 4))), 0)

    def test_double_flip_restores_original(self):
        x = batch64((2, 3, 6, 6), seed=2)
        np.testing.assert_array_equal(augment.hflip(augment.hflip(x)).data, x.data)

    def test_scale_and_shift_preserve_shape(self):
        x = batch64((2, 1, 8, 8), seed=4)
        for tf in [("scale", 0.8), ("scale", 1.2), ("scale", 1.0), ("shift", (1, -1))]:
            out = augment.apply_transform(x, tf)
            assert out.shape == x.shape

    def test_shift_moves_content_with_zero_pad(self):
        x = np.zeros((1, 1, 4, 4))
        x[0, 0, 1, 1] = 1.0
        out = augment.apply_transform(T.Tensor(x), ("shift", (1, 2)))
        assert out.data[0, 0, 2, 3] == 1.0
        assert out.data.sum() == 1.0

    def test_gradient_matches_finite_differences_under_fixed_seed(self):
        rng = np.random.default_rng(5)
        real = T.Tensor(rng.normal(size=(2, 1, 4, 4)))
        syn = T.Tensor(rng.normal(size=(2, 1, 4, 4)), requires_grad=True)
        for seed in range(4):  # covers several transform kinds
            fd_gradcheck(
                lambda s=seed: T.sum_squares(dsa_augment(real, syn, s)[1]),
                [syn],
            )

    def test_augment_array_matches_tensor_path(self):
        imgs = np.random.default_rng(6).normal(size=(2, 3, 8, 8)).astype(np.float32)
        out1 = augment.augment_array(imgs, 11)
        real, syn = dsa_augment(T.Tensor(imgs), T.Tensor(imgs.copy()), 11)
        np.testing.assert_array_equal(out1, syn.data)
