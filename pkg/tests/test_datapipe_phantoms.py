import numpy as np
import pytest
from scipy import ndimage

from datapipe.phantoms import synth_generate, synth_phantom
from datapipe.preprocessing import EnhancementParams, preprocess_sample, preprocess_samples
from utils.errors import ConfigError

RING = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool)


def _isolated_outliers(image: np.ndarray, margin: float = 0.3) -> int:
    """Pixels brighter or darker than every 8-neighbor by more than ``margin``"""
    highest = ndimage.maximum_filter(image, footprint=RING, mode="nearest")
    lowest = ndimage.minimum_filter(image, footprint=RING, mode="nearest")
    return int(np.sum((image - highest > margin) | (lowest - image > margin)))


@pytest.fixture
def phantoms():
    return synth_generate(12, seed=4, size=64)


class TestPhantoms:
    def test_class_balance(self):
        labels = [s.label for s in synth_generate(6, seed=9, size=64)]
        assert np.bincount(labels).tolist() == [2, 2, 2]

    def test_deterministic(self, phantoms):
        again = synth_generate(12, seed=4, size=64)
        for a, b in zip(phantoms, again):
            assert a.id == b.id
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_sample_depends_only_on_seed_and_index(self, phantoms):
        alone = synth_phantom(7, seed=4, size=64)
        np.testing.assert_array_equal(alone.image, phantoms[7].image)

    def test_seed_changes_content(self, phantoms):
        other = synth_generate(1, seed=5, size=64)[0]
        assert not np.array_equal(other.image, phantoms[0].image)

    def test_masks_inside_image(self, phantoms):
        for s in phantoms:
            assert s.mask.any()
            assert not (s.mask[0].any() or s.mask[-1].any() or s.mask[:, 0].any() or s.mask[:, -1].any())

    def test_ids_and_ranges(self, phantoms):
        assert phantoms[3].id == "synth-00003"
        for s in phantoms:
            assert s.shape == (64, 64)
            assert 0.0 <= s.image.min() and s.image.max() <= 1.0

    def test_pituitary_tumors_are_small(self, phantoms):
        sizes = {label: np.mean([s.mask.sum() for s in phantoms if s.label == label]) for label in range(3)}
        assert sizes[1] < sizes[0] and sizes[1] < sizes[2]

    def test_nothing_to_generate(self):
        with pytest.raises(ConfigError):
            synth_generate(0, seed=0)


class TestPreprocessing:
    def test_mask_untouched(self, phantoms):
        for before in phantoms[:3]:
            after = preprocess_sample(before)
            np.testing.assert_array_equal(after.mask, before.mask)
            assert (after.id, after.label, after.patient_id) == (before.id, before.label, before.patient_id)

    def test_impulses_removed(self):
        noisy = synth_phantom(0, seed=2, size=128, impulse_fraction=0.004)
        assert _isolated_outliers(noisy.image) > 0
        assert _isolated_outliers(preprocess_sample(noisy).image) == 0

    def test_constant_image_stays_constant(self, phantoms):
        flat = phantoms[0].with_image(np.full((64, 64), 0.4))
        assert np.unique(preprocess_sample(flat).image).size == 1

    def test_custom_params(self, phantoms):
        params = EnhancementParams(median_k=3, tiles=(2, 2), clip_limit=4.0)
        out = preprocess_samples(phantoms[:2], params)
        assert len(out) == 2 and out[0].image.shape == (64, 64)
