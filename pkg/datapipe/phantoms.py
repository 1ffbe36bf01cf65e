"""
Synthetic MRI-like phantoms for desk-scale experiments.

Each phantom is a textured elliptical "brain" inside a bright rim with one tumor blob
whose geometry depends on the class:
  0 Glioma      large irregular star-shaped blob anywhere in the brain
  1 Pituitary   small round blob close to the brain center
  2 Meningioma  smooth round blob near the brain rim
followed by Gaussian noise and salt-and-pepper impulses.
"""

from typing import List, Tuple

import numpy as np
from scipy import ndimage

from config import NUM_CLASSES, SYNTH_IMPULSE_FRACTION, SYNTH_NOISE_STD, SYNTH_SIZE
from datapipe.sample import Sample
from utils.errors import ConfigError, DataError
from utils.logger import log_data_quality_check, log_pipeline_step

BRAIN_LEVEL = 0.35
RIM_LEVEL = 0.8
TUMOR_LEVELS = (0.85, 0.7, 0.9)


def _grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    return rows, cols


def _brain(rng: np.random.Generator, size: int):
    center = size / 2.0 + rng.uniform(-0.02, 0.02, size=2) * size
    axes = np.array([rng.uniform(0.38, 0.42), rng.uniform(0.32, 0.37)]) * size
    rows, cols = _grid(size)
    radius = np.hypot((rows - center[0]) / axes[0], (cols - center[1]) / axes[1])
    return center, axes, radius


def _star(rng, size, center, axes, rows, cols):
    base = rng.uniform(0.09, 0.12) * size
    lobes = int(rng.integers(5, 8))
    depth = rng.uniform(0.25, 0.4)
    phase = rng.uniform(0, 2 * np.pi)
    offset = rng.uniform(-0.35, 0.35, size=2) * axes
    c = center + offset
    theta = np.arctan2(rows - c[0], cols - c[1])
    reach = base * (1.0 + depth * np.cos(lobes * theta + phase))
    return np.hypot(rows - c[0], cols - c[1]) <= reach


def _central_blob(rng, size, center, axes, rows, cols):
    radius = rng.uniform(0.035, 0.055) * size
    c = center + rng.uniform(-0.05, 0.05, size=2) * size
    return np.hypot(rows - c[0], cols - c[1]) <= radius


def _rim_blob(rng, size, center, axes, rows, cols):
    radius = rng.uniform(0.06, 0.08) * size
    angle = rng.uniform(0, 2 * np.pi)
    # keep the blob inside the brain and its centroid a quarter image away from the border
    reach = rng.uniform(0.55, 0.65)
    c = center + reach * axes * np.array([np.sin(angle), np.cos(angle)])
    margin = size / 4.0 + 1.0
    c = np.clip(c, margin, size - 1 - margin)
    return np.hypot(rows - c[0], cols - c[1]) <= radius


_BLOBS = (_star, _central_blob, _rim_blob)


def synth_phantom(index: int, seed: int, size: int = SYNTH_SIZE,
                  noise_std: float = SYNTH_NOISE_STD,
                  impulse_fraction: float = SYNTH_IMPULSE_FRACTION) -> Sample:
    label = index % NUM_CLASSES
    rng = np.random.default_rng([seed, index])
    rows, cols = _grid(size)
    center, axes, radius = _brain(rng, size)
    brain = radius <= 1.0
    rim = (radius > 1.0) & (radius <= 1.0 + 3.0 / axes.min())

    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 32.0)
    texture *= 0.08 / max(np.abs(texture).max(), 1e-12)
    image = np.where(brain, BRAIN_LEVEL + texture, 0.0)
    image = np.where(rim, RIM_LEVEL, image)

    mask = _BLOBS[label](rng, size, center, axes, rows, cols) & brain
    if not mask.any():
        raise DataError(f"phantom {index} produced an empty tumor")
    image = np.where(mask, TUMOR_LEVELS[label] + 0.5 * texture, image)

    image = image + rng.normal(0.0, noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    impulses = rng.random(image.shape) < impulse_fraction
    image[impulses] = rng.integers(0, 2, size=int(impulses.sum())).astype(np.float64)

    return Sample(
        id=f"synth-{index:05d}",
        image=image,
        mask=mask,
        label=label,
        patient_id=f"SP{label}-{index // (3 * NUM_CLASSES):04d}",
    )


def synth_generate(n: int, seed: int, size: int = SYNTH_SIZE,
                   noise_std: float = SYNTH_NOISE_STD,
                   impulse_fraction: float = SYNTH_IMPULSE_FRACTION) -> List[Sample]:
    """
    n phantoms, classes assigned round-robin so counts differ by at most one;
    sample i depends only on (seed, i)
    """
    if n < 1:
        raise ConfigError(f"number of phantoms must be >= 1, got {n}")
    logger = log_pipeline_step("Generate phantoms", "STARTED", f"n={n} seed={seed} size={size}")
    samples = [synth_phantom(i, seed, size, noise_std, impulse_fraction) for i in range(n)]

    counts = np.bincount([s.label for s in samples], minlength=NUM_CLASSES)
    log_data_quality_check("Phantom Class Balance", "PASS", f"counts={counts.tolist()}")
    logger.info(f"Generated {len(samples)} phantoms")
    return samples
