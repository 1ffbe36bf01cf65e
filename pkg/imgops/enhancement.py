"""
Enhancement chain: median filter for impulse noise, then CLAHE; plus block-mean
downscaling used for multiscale inputs
"""

import math
from typing import Tuple

import cv2
import numpy as np
from scipy import ndimage

from imgops.image_io import as_image
from utils.errors import ShapeError

# CLAHE bin counts map onto OpenCV's 8-bit and 16-bit histogram paths
CLAHE_DEPTHS = {256: np.uint8, 65536: np.uint16}


def median_filter(img: np.ndarray, k: int = 5) -> np.ndarray:
    """
    k×k median with replicate padding at the borders
    """
    image = as_image(img)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"median kernel must be a positive odd integer, got {k}")
    if k > min(image.shape):
        raise ValueError(f"median kernel {k} exceeds image extents {image.shape}")
    return ndimage.median_filter(image, size=k, mode="nearest")


def clahe(
    img: np.ndarray,
    tiles: Tuple[int, int] = (8, 8),
    clip_limit: float = 2.0,
    bins: int = 256,
) -> np.ndarray:
    """
    Contrast-limited adaptive histogram equalization.

    ``tiles`` is (rows, cols) of the tile grid; ``clip_limit`` is a multiple of the
    uniform bin height (tile_pixels / bins), ``math.inf`` disables clipping. Tile
    mappings are blended bilinearly. Output is in [0, 1].
    """
    image = as_image(img)
    tile_rows, tile_cols = tiles
    if tile_rows < 1 or tile_cols < 1:
        raise ValueError(f"tile grid must be at least 1×1, got {tiles}")
    if clip_limit < 1:
        raise ValueError(f"clip limit must be >= 1, got {clip_limit}")
    if bins not in CLAHE_DEPTHS:
        raise ValueError(f"bins must be one of {sorted(CLAHE_DEPTHS)}, got {bins}")

    depth = CLAHE_DEPTHS[bins]
    top = bins - 1
    quantized = np.clip(np.round(image * top), 0, top).astype(depth)

    # OpenCV treats a non-positive limit as "no clipping"
    limit = 0.0 if math.isinf(clip_limit) else float(clip_limit)
    equalizer = cv2.createCLAHE(clipLimit=limit, tileGridSize=(tile_cols, tile_rows))
    return equalizer.apply(quantized).astype(np.float64) / top


def downscale(img: np.ndarray, factor: int) -> np.ndarray:
    """
    Block-average pooling by a power-of-two factor
    """
    array = np.asarray(img)
    if array.dtype.kind != "f":
        array = array.astype(np.float64)
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"downscale factor must be a power of two, got {factor}")
    height, width = array.shape[-2:]
    if height % factor or width % factor:
        raise ShapeError(f"downscale factor {factor} does not divide extents {height}×{width}")
    if factor == 1:
        return array.copy()
    lead = array.shape[:-2]
    blocks = array.reshape(*lead, height // factor, factor, width // factor, factor)
    return blocks.mean(axis=(-3, -1))


def enhance(img: np.ndarray, median_k: int = 5, tiles=(8, 8), clip_limit: float = 2.0, bins: int = 256) -> np.ndarray:
    """
    The full enhancement chain: median filter first, then CLAHE
    """
    return clahe(median_filter(img, median_k), tiles=tiles, clip_limit=clip_limit, bins=bins)
