import math

import numpy as np
import pytest
from PIL import Image

from imgops.enhancement import clahe, downscale, enhance, median_filter
from imgops.image_io import overlay_rgb, read_image, read_mask, write_image, write_mask, write_overlay
from utils.errors import DataError, ShapeError


def _histogram_equalize(image: np.ndarray) -> np.ndarray:
    levels = np.round(image * 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    mapping = np.round(np.cumsum(hist) * 255.0 / levels.size)
    return mapping[levels] / 255.0


class TestMedianFilter:
    def test_constant_image(self):
        img = np.full((9, 9), 0.4)
        np.testing.assert_array_equal(median_filter(img, 5), img)

    def test_single_impulse_removed(self):
        img = np.zeros((11, 11))
        img[5, 5] = 1.0
        np.testing.assert_array_equal(median_filter(img, 5), np.zeros((11, 11)))

    def test_step_edge_preserved(self):
        img = np.tile(np.array([0.0, 0.0, 1.0, 1.0, 1.0]), (3, 1))
        np.testing.assert_array_equal(median_filter(img, 3), img)

    @pytest.mark.parametrize("k", [0, 4, -1])
    def test_kernel_must_be_positive_odd(self, k):
        with pytest.raises(ValueError):
            median_filter(np.zeros((9, 9)), k)

    def test_kernel_larger_than_image(self):
        with pytest.raises(ValueError):
            median_filter(np.zeros((3, 3)), 5)


class TestClahe:
    def test_constant_image_stays_constant(self):
        out = clahe(np.full((32, 32), 0.5))
        assert np.unique(out).size == 1

    def test_single_tile_unclipped_is_global_equalization(self, rng):
        for _ in range(20):
            img = np.round(rng.random((32, 32)) ** rng.uniform(0.5, 3.0) * 255) / 255
            out = clahe(img, tiles=(1, 1), clip_limit=math.inf)
            assert np.max(np.abs(out - _histogram_equalize(img))) <= 1.0 / 255 + 1e-12

    def test_output_range(self, rng):
        out = clahe(rng.random((40, 40)), tiles=(4, 4))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_monotone_within_single_tile(self, rng):
        img = rng.random((16, 16))
        out = clahe(img, tiles=(1, 1), clip_limit=2.0)
        order = np.argsort(img.ravel(), kind="stable")
        assert np.all(np.diff(out.ravel()[order]) >= -1e-12)

    def test_sixteen_bit_path(self, rng):
        out = clahe(rng.random((32, 32)), bins=65536)
        assert out.dtype == np.float64 and out.max() <= 1.0

    @pytest.mark.parametrize("kwargs", [{"tiles": (0, 8)}, {"clip_limit": 0.5}, {"bins": 100}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            clahe(np.zeros((16, 16)), **kwargs)


class TestDownscale:
    def test_block_mean(self):
        np.testing.assert_array_equal(downscale(np.array([[1.0, 1.0], [0.0, 0.0]]), 2), [[0.5]])

    @pytest.mark.parametrize("factor", [1, 2, 4, 8])
    def test_constant(self, factor):
        np.testing.assert_allclose(downscale(np.full((16, 16), 0.7), factor), 0.7)

    def test_associative(self, rng):
        img = rng.random((16, 16))
        np.testing.assert_allclose(downscale(downscale(img, 2), 2), downscale(img, 4), rtol=1e-14)

    def test_leading_axes_kept(self, rng):
        assert downscale(rng.random((3, 8, 8)), 2).shape == (3, 4, 4)

    def test_factor_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            downscale(np.zeros((6, 6)), 3)

    def test_factor_must_divide(self):
        with pytest.raises(ShapeError):
            downscale(np.zeros((6, 6)), 4)


class TestEnhance:
    def test_impulses_removed_before_equalization(self):
        img = np.full((32, 32), 0.4)
        for r, c in [(3, 5), (10, 20), (20, 8), (28, 28), (15, 15)]:
            img[r, c] = 1.0
        out = enhance(img)
        assert np.unique(out).size == 1


class TestImageFiles:
    def test_image_round_trip_quantizes_to_8_bit(self, tmp_path, rng):
        img = rng.random((8, 8))
        path = str(tmp_path / "img.png")
        write_image(path, img)
        back = read_image(path)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12

    def test_mask_round_trip(self, tmp_path, rng):
        mask = rng.random((8, 8)) > 0.5
        path = str(tmp_path / "sub" / "mask.png")
        write_mask(path, mask)
        np.testing.assert_array_equal(read_mask(path), mask)

    def test_non_binary_mask_file_rejected(self, tmp_path):
        path = str(tmp_path / "gray.png")
        write_image(path, np.full((4, 4), 0.5))
        with pytest.raises(DataError):
            read_mask(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_image(str(tmp_path / "absent.png"))

    def test_overlay_tints(self):
        image = np.full((2, 2), 0.5)
        truth = np.array([[1, 1], [0, 0]], dtype=bool)
        pred = np.array([[1, 0], [1, 0]], dtype=bool)
        rgb = overlay_rgb(image, truth, pred, alpha=0.5)
        assert rgb.shape == (2, 2, 3) and rgb.dtype == np.uint8
        np.testing.assert_array_equal(rgb[1, 1], [128, 128, 128])
        np.testing.assert_array_equal(rgb[0, 0], [192, 192, 64])
        np.testing.assert_array_equal(rgb[0, 1], [64, 192, 64])
        np.testing.assert_array_equal(rgb[1, 0], [192, 64, 64])

    def test_overlay_file(self, tmp_path, rng):
        path = str(tmp_path / "overlays" / "s.png")
        write_overlay(path, rng.random((6, 10)), np.zeros((6, 10), bool), np.ones((6, 10), bool))
        with Image.open(path) as overlay:
            assert overlay.mode == "RGB" and overlay.size == (10, 6)

    def test_overlay_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            overlay_rgb(np.zeros((4, 4)), np.zeros((4, 4), bool), np.zeros((3, 4), bool))
