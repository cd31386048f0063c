"""Spatial feature map, Dice loss, window fusion and augmentations."""

import numpy as np
import pytest

from renovor.fcnmath import (
    AugmentationParams,
    SubVolumeSpec,
    augment_bspline,
    augment_hybrid,
    augment_rigid,
    bspline_field,
    dice_loss,
    fuse_predictions,
    sliding_window_positions,
    spatial_feature_map,
)
from renovor.volume import LabelVolume, ScalarVolume, VolumeGeometry


class TestSpatialFeatureMap:
    def test_matches_normalized_global_coordinates(self):
        geom = VolumeGeometry((100, 100, 100))
        spec = SubVolumeSpec(size=(4, 4, 4), origin=(50, 0, 96))
        fmap = spatial_feature_map(geom, spec, map_size=(4, 4, 4))
        assert fmap.shape == (3, 4, 4, 4)
        # voxel (50, 0, 99) is local (0, 0, 3)
        assert abs(fmap[0, 3, 0, 0] - 0.50) < 1e-12
        assert abs(fmap[1, 3, 0, 0] - 0.00) < 1e-12
        assert abs(fmap[2, 3, 0, 0] - 0.99) < 1e-12

    def test_origin_zero_minima(self):
        geom = VolumeGeometry((64, 64, 64))
        fmap = spatial_feature_map(geom, SubVolumeSpec(size=(32, 32, 32)))
        assert fmap.shape == (3, 2, 2, 2)
        assert fmap[0].min() == 0.0
        assert fmap[1].min() == 0.0
        assert fmap[2].min() == 0.0

    def test_random_specs_stay_in_unit_range(self):
        rng = np.random.default_rng(9)
        geom = VolumeGeometry((40, 50, 60))
        for _ in range(50):
            size = tuple(int(rng.integers(1, 17)) for _ in range(3))
            origin = tuple(
                int(rng.integers(0, geom.dims[a] - size[a] + 1)) for a in range(3)
            )
            msize = tuple(int(rng.integers(1, 5)) for _ in range(3))
            fmap = spatial_feature_map(
                geom, SubVolumeSpec(size=size, origin=origin), map_size=msize
            )
            assert fmap.min() >= 0.0 and fmap.max() <= 1.0

    def test_channels_monotone_along_own_axis(self):
        geom = VolumeGeometry((32, 32, 32))
        spec = SubVolumeSpec(size=(16, 16, 16), origin=(8, 4, 2))
        fmap = spatial_feature_map(geom, spec, map_size=(5, 4, 3))
        assert np.all(np.diff(fmap[0], axis=2) >= 0)  # x channel along x
        assert np.all(np.diff(fmap[1], axis=1) >= 0)
        assert np.all(np.diff(fmap[2], axis=0) >= 0)

    def test_default_map_size_is_sixteenth(self):
        geom = VolumeGeometry((128, 128, 64))
        fmap = spatial_feature_map(geom, SubVolumeSpec(size=(64, 48, 32)))
        assert fmap.shape == (3, 2, 3, 4)

    def test_spec_outside_parent_rejected(self):
        geom = VolumeGeometry((16, 16, 16))
        with pytest.raises(ValueError):
            spatial_feature_map(geom, SubVolumeSpec(size=(8, 8, 8), origin=(12, 0, 0)))


class TestDiceLoss:
    def test_perfect_prediction(self):
        gt = np.zeros((2, 4, 4, 4))
        gt[0, :2] = 1.0
        gt[1, 2:] = 1.0
        loss, _ = dice_loss(gt, gt)
        assert abs(loss + 1.0) < 1e-6

    def test_zero_overlap(self):
        gt = np.zeros((1, 2, 2, 2))
        gt[0, 0] = 1.0
        pred = np.zeros((1, 2, 2, 2))
        pred[0, 1] = 1.0
        loss, _ = dice_loss(pred, gt)
        assert abs(loss) < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        pred = rng.uniform(0.05, 0.95, size=(2, 4, 4, 4))
        gt = np.zeros((2, 4, 4, 4))
        gt[0] = rng.random((4, 4, 4)) < 0.5
        gt[1] = 1.0 - gt[0]
        _, grad = dice_loss(pred, gt)
        h = 1e-6
        flat = pred.ravel()
        for idx in rng.choice(flat.size, size=24, replace=False):
            bumped = flat.copy()
            bumped[idx] += h
            up, _ = dice_loss(bumped.reshape(pred.shape), gt)
            bumped[idx] -= 2 * h
            down, _ = dice_loss(bumped.reshape(pred.shape), gt)
            fd = (up - down) / (2 * h)
            g = grad.ravel()[idx]
            assert abs(fd - g) <= 1e-4 * max(1.0, abs(fd)), (fd, g)

    def test_gradient_vanishes_at_perfect_prediction(self):
        gt = np.zeros((2, 3, 3, 3))
        gt[0, :1] = 1.0
        gt[1, 1:] = 1.0
        _, grad = dice_loss(gt, gt)
        assert np.abs(grad).max() <= 1e-6

    def test_loss_range_on_random_inputs(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pred = rng.random((3, 3, 3, 3))
            gt = np.eye(3)[rng.integers(0, 3, size=(3, 3, 3))].transpose(3, 0, 1, 2)
            loss, _ = dice_loss(pred, gt)
            assert -1.0 <= loss <= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_loss(np.zeros((2, 3, 3, 3)), np.zeros((2, 3, 3, 2)))


class TestSlidingWindows:
    def test_even_tiling(self):
        spec = SubVolumeSpec(size=(4, 8, 8), stride=(4, 8, 8))
        origins = sliding_window_positions((8, 8, 8), spec)
        assert origins == [(0, 0, 0), (4, 0, 0)]

    def test_clamped_final_window(self):
        spec = SubVolumeSpec(size=(4, 10, 10), stride=(4, 10, 10))
        origins = sliding_window_positions((10, 10, 10), spec)
        assert [o[0] for o in origins] == [0, 4, 6]

    def test_random_sizes_cover_parent(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            dims = tuple(int(rng.integers(4, 20)) for _ in range(3))
            size = tuple(int(rng.integers(2, dims[a] + 1)) for a in range(3))
            stride = tuple(int(rng.integers(1, size[a] + 1)) for a in range(3))
            spec = SubVolumeSpec(size=size, stride=stride)
            covered = np.zeros(dims[::-1], bool)
            for ox, oy, oz in sliding_window_positions(dims, spec):
                covered[
                    oz : oz + size[2], oy : oy + size[1], ox : ox + size[0]
                ] = True
            assert covered.all()

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            sliding_window_positions((4, 4, 4), SubVolumeSpec(size=(5, 4, 4)))


class TestFusePredictions:
    def test_overlap_averages(self):
        geom = VolumeGeometry((6, 1, 1))
        windows = [
            ((0, 0, 0), np.full((1, 1, 4), 0.2)),
            ((2, 0, 0), np.full((1, 1, 4), 0.8)),
        ]
        fused = fuse_predictions(geom, windows)
        assert np.allclose(fused.data[0, 0], [0.2, 0.2, 0.5, 0.5, 0.8, 0.8])

    def test_single_coverage_is_identity(self):
        geom = VolumeGeometry((4, 4, 2))
        rng = np.random.default_rng(7)
        block = rng.random((2, 4, 4))
        fused = fuse_predictions(geom, [((0, 0, 0), block)])
        assert np.allclose(fused.data, block, atol=1e-7)

    def test_matches_accumulator_oracle(self):
        rng = np.random.default_rng(17)
        geom = VolumeGeometry((10, 9, 8))
        spec = SubVolumeSpec(size=(5, 4, 4), stride=(3, 3, 2))
        windows = [
            (origin, rng.random((4, 4, 5)))
            for origin in sliding_window_positions(geom.dims, spec)
        ]
        fused = fuse_predictions(geom, windows)
        acc = np.zeros(geom.shape_zyx)
        cnt = np.zeros(geom.shape_zyx)
        for (ox, oy, oz), block in windows:
            acc[oz : oz + 4, oy : oy + 4, ox : ox + 5] += block
            cnt[oz : oz + 4, oy : oy + 4, ox : ox + 5] += 1
        assert np.abs(fused.data - acc / cnt).max() < 1e-6

    def test_order_invariance(self):
        rng = np.random.default_rng(23)
        geom = VolumeGeometry((6, 6, 6))
        windows = [
            ((0, 0, 0), rng.random((4, 6, 6))),
            ((0, 0, 2), rng.random((4, 6, 6))),
            ((0, 0, 1), rng.random((4, 6, 6))),
        ]
        a = fuse_predictions(geom, windows)
        b = fuse_predictions(geom, windows[::-1])
        assert np.array_equal(a.data, b.data)

    def test_uncovered_voxel_rejected(self):
        geom = VolumeGeometry((4, 4, 4))
        with pytest.raises(ValueError):
            fuse_predictions(geom, [((0, 0, 0), np.zeros((2, 4, 4)))])


def label_ball(dims=(24, 24, 24), center=(12, 12, 12), r=6):
    nx, ny, nz = dims
    z, y, x = np.mgrid[0:nz, 0:ny, 0:nx]
    grid = ((x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2) <= r * r
    return LabelVolume(VolumeGeometry(dims), grid.astype(np.uint16))


class TestAugmentRigid:
    def test_identity_parameters_are_bitwise_identity(self):
        params = AugmentationParams(
            translation_range=(0, 0, 0), rotation_range_deg=0.0, seed=1
        )
        ball = label_ball()
        out, tf = augment_rigid(ball, params)
        assert tf.angles_deg == (0.0, 0.0, 0.0)
        assert tf.translation == (0.0, 0.0, 0.0)
        assert np.array_equal(out.data, ball.data)

    def test_scalar_identity(self):
        rng = np.random.default_rng(2)
        vol = ScalarVolume(VolumeGeometry((8, 8, 8)), rng.random((8, 8, 8)))
        params = AugmentationParams(
            translation_range=(0, 0, 0), rotation_range_deg=0.0, seed=1
        )
        out, _ = augment_rigid(vol, params)
        assert np.allclose(out.data, vol.data, atol=1e-7)

    def test_pure_translation_moves_delta(self):
        grid = np.zeros((7, 7, 7), np.float32)
        grid[3, 3, 3] = 1.0
        vol = ScalarVolume(VolumeGeometry((7, 7, 7)), grid)

        class OneX:
            """Generator stand-in producing angle 0 and shift (1, 0, 0)."""

            def uniform(self, lo, hi, size=None):
                if size == 3:
                    return np.zeros(3)
                return 1.0 if hi >= 1.0 else 0.0

        params = AugmentationParams(translation_range=(1, 0, 0), rotation_range_deg=0.0)
        out, tf = augment_rigid(vol, params, rng=OneX())
        assert tf.translation == (1.0, 0.0, 0.0)
        assert out.data[3, 3, 4] == 1.0
        assert out.data[3, 3, 3] == 0.0

    def test_rotation_roundtrip_keeps_mask(self):
        ball = label_ball()
        data = np.array(ball.data)
        data[8:16, 8:16, 4:12] = 1  # break the symmetry
        ball = LabelVolume(ball.geometry, data)

        class FixedAngle:
            def __init__(self, deg):
                self.deg = deg

            def uniform(self, lo, hi, size=None):
                if size == 3:
                    return np.zeros(3)
                return self.deg

        params = AugmentationParams(translation_range=(0, 0, 0))
        once, _ = augment_rigid(ball, params, rng=FixedAngle(15.0))
        back, _ = augment_rigid(once, params, rng=FixedAngle(-15.0))
        a = ball.data > 0
        b = back.data > 0
        dsc = 2 * np.sum(a & b) / (a.sum() + b.sum())
        assert dsc >= 0.95

    def test_out_of_field_fill_is_minimum(self):
        grid = np.full((5, 5, 5), 7.0, np.float32)
        grid[0, 0, 0] = 3.0
        vol = ScalarVolume(VolumeGeometry((5, 5, 5)), grid)

        class BigShift:
            def uniform(self, lo, hi, size=None):
                if size == 3:
                    return np.zeros(3)
                return 4.0 if hi >= 4.0 else 0.0

        params = AugmentationParams(translation_range=(4, 0, 0), rotation_range_deg=0.0)
        out, _ = augment_rigid(vol, params, rng=BigShift())
        assert np.all(out.data[:, :, :4] == 3.0)  # filled with the minimum

    def test_draws_reproducible_from_seed(self):
        params = AugmentationParams(seed=99)
        ball = label_ball()
        a, tfa = augment_rigid(ball, params)
        b, tfb = augment_rigid(ball, params)
        assert tfa == tfb
        assert np.array_equal(a.data, b.data)


class TestAugmentBspline:
    def test_zero_lattice_is_identity_field(self):
        field = bspline_field((5, 6, 7), np.zeros((3, 3, 3, 3)))
        assert field.shape == (3, 5, 6, 7)
        assert np.all(field == 0.0)

    def test_constant_lattice_gives_constant_field(self):
        control = np.zeros((3, 3, 3, 3))
        control[0] = 2.0
        field = bspline_field((4, 4, 4), control)
        assert np.allclose(field[0], 2.0)
        assert np.all(field[1:] == 0.0)

    def test_field_reproducible_from_seed(self):
        ball = label_ball(dims=(12, 12, 12), center=(6, 6, 6), r=4)
        params = AugmentationParams(seed=5)
        a, fa = augment_bspline(ball, params)
        b, fb = augment_bspline(ball, params)
        assert np.array_equal(fa, fb)
        assert np.array_equal(a.data, b.data)

    def test_convex_hull_bound_over_many_seeds(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            control = rng.uniform(-3.0, 3.0, size=(3, 3, 3, 3))
            field = bspline_field((9, 8, 7), control)
            assert np.abs(field).max() <= 3.0 + 1e-12
            assert np.abs(field[0]).max() <= np.abs(control[0]).max() + 1e-12

    def test_identity_parameters_for_labels(self):
        ball = label_ball(dims=(12, 12, 12), center=(6, 6, 6), r=4)
        params = AugmentationParams(max_displacement_voxels=0.0, seed=3)
        out, field = augment_bspline(ball, params)
        assert np.all(field == 0.0)
        assert np.array_equal(out.data, ball.data)

    def test_hybrid_composes_both(self):
        ball = label_ball(dims=(16, 16, 16), center=(8, 8, 8), r=5)
        params = AugmentationParams(seed=42)
        out, (tf, field) = augment_hybrid(ball, params)
        assert out.data.shape == ball.data.shape
        assert field.shape == (3, 16, 16, 16)
        assert tf.angles_deg[2] != 0.0
        # label volumes stay label volumes
        assert out.data.dtype == np.uint16


class TestParamValidation:
    def test_negative_ranges_rejected(self):
        with pytest.raises(ValueError):
            AugmentationParams(translation_range=(-1, 0, 0))
        with pytest.raises(ValueError):
            AugmentationParams(rotation_range_deg=-2.0)
        with pytest.raises(ValueError):
            AugmentationParams(control_points=1)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SubVolumeSpec(size=(0, 4, 4))
        with pytest.raises(ValueError):
            SubVolumeSpec(size=(4, 4, 4), stride=(0, 1, 1))
        with pytest.raises(ValueError):
            SubVolumeSpec(size=(4, 4, 4), origin=(-1, 0, 0))
