"""
Post-processing of preliminary segmentation maps: components, convex hull, center of
gravity, ROI cropping, and the boundary distance field used by the weighted Dice loss
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage
from skimage.morphology import convex_hull_image

from imgops.image_io import as_mask
from utils.errors import ShapeError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box [row_lo, row_hi) × [col_lo, col_hi)"""
    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int

    def crop(self, array: np.ndarray) -> np.ndarray:
        return np.asarray(array)[..., self.row_lo:self.row_hi, self.col_lo:self.col_hi].copy()

    @property
    def height(self) -> int:
        return self.row_hi - self.row_lo

    @property
    def width(self) -> int:
        return self.col_hi - self.col_lo

    def to_dict(self) -> dict:
        return {"row_lo": self.row_lo, "row_hi": self.row_hi, "col_lo": self.col_lo, "col_hi": self.col_hi}


@dataclass(frozen=True)
class RoiCrop:
    image: np.ndarray
    map: np.ndarray
    box: BoundingBox


@dataclass(frozen=True)
class Dropped:
    """The crop window left the image; the sample is excluded"""
    center: Tuple[int, int]
    reason: str


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(prob_map) >= threshold


def connected_components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    8-connected labeling; ids 1..n follow first-encountered raster order, 0 is background
    """
    bits = as_mask(mask)
    labels, count = ndimage.label(bits, structure=EIGHT_CONNECTED)
    return labels, int(count)


def largest_component(mask: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Keep only the biggest component (ties -> smallest id).

    Returns (mask, is_empty); an empty input yields an empty mask and is_empty=True,
    which the caller has to handle.
    """
    labels, count = connected_components(mask)
    if count == 0:
        return np.zeros(labels.shape, dtype=bool), True
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    keep = int(np.argmax(sizes)) + 1
    return labels == keep, False


def _segment_fill(points: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    # degenerate hull: the pixel centers lying exactly on the segment between the extreme points
    ordered = points[np.lexsort((points[:, 1], points[:, 0]))]
    start, end = ordered[0], ordered[-1]
    direction = end - start
    rows, cols = np.indices(shape)
    cross = (rows - start[0]) * direction[1] - (cols - start[1]) * direction[0]
    lo, hi = points.min(axis=0), points.max(axis=0)
    within = (rows >= lo[0]) & (rows <= hi[0]) & (cols >= lo[1]) & (cols <= hi[1])
    return within & (cross == 0)


def convex_hull_fill(mask: np.ndarray) -> np.ndarray:
    """
    Set every pixel whose center lies inside the convex hull of the foreground pixel
    centers; the result is always a superset of the input
    """
    bits = as_mask(mask)
    points = np.argwhere(bits)
    if len(points) == 0:
        raise ValueError("convex hull of an empty mask is undefined")

    if len(points) < 3 or np.linalg.matrix_rank(points - points[0]) < 2:
        return _segment_fill(points, bits.shape) | bits
    return convex_hull_image(bits, offset_coordinates=False) | bits


def center_of_gravity(mask: np.ndarray) -> Tuple[float, float]:
    bits = as_mask(mask)
    coords = np.argwhere(bits)
    if len(coords) == 0:
        raise ValueError("center of gravity of an empty mask is undefined")
    row, col = coords.mean(axis=0)
    return float(row), float(col)


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def cog_pixel(mask: np.ndarray) -> Tuple[int, int]:
    row, col = center_of_gravity(mask)
    return round_half_up(row), round_half_up(col)


def crop_window(
    img: np.ndarray,
    map: np.ndarray,
    center: Tuple[int, int],
    half_window: int,
    mode: str = "drop",
) -> Union[RoiCrop, Dropped]:
    """
    Crop [r-h, r+h) × [c-h, c+h) from the image and the preliminary map.

    In "drop" mode a window that leaves the image yields Dropped; in "clamp" mode the
    window is shifted back inside the image (Dropped only if the image is smaller than
    the window).
    """
    if half_window < 1:
        raise ValueError(f"half window must be >= 1, got {half_window}")
    if mode not in ("drop", "clamp"):
        raise ValueError(f"unknown crop mode {mode!r}")
    image = np.asarray(img)
    prob_map = np.asarray(map)
    if image.shape[-2:] != prob_map.shape[-2:]:
        raise ShapeError(f"image {image.shape} and map {prob_map.shape} extents differ")

    height, width = image.shape[-2:]
    row, col = int(center[0]), int(center[1])
    size = 2 * half_window
    row_lo, col_lo = row - half_window, col - half_window
    inside = row_lo >= 0 and col_lo >= 0 and row_lo + size <= height and col_lo + size <= width

    if not inside:
        if mode == "drop":
            return Dropped(center=(row, col), reason="window exceeds image border")
        if size > height or size > width:
            return Dropped(center=(row, col), reason="window larger than image")
        row_lo = min(max(row_lo, 0), height - size)
        col_lo = min(max(col_lo, 0), width - size)

    box = BoundingBox(row_lo, row_lo + size, col_lo, col_lo + size)
    return RoiCrop(image=box.crop(image), map=box.crop(prob_map), box=box)


def center_box(shape: Tuple[int, int], half_window: int) -> Optional[BoundingBox]:
    """Window centered on the image, used when a prediction comes back empty"""
    height, width = shape
    size = 2 * half_window
    if size > height or size > width:
        return None
    row_lo, col_lo = (height - size) // 2, (width - size) // 2
    return BoundingBox(row_lo, row_lo + size, col_lo, col_lo + size)


def mask_boundary(gt: np.ndarray) -> np.ndarray:
    """
    Foreground pixels with at least one background 4-neighbor (outside the image counts
    as background)
    """
    bits = as_mask(gt)
    padded = np.pad(bits, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return bits & ~interior


def boundary_distance_map(gt: np.ndarray) -> np.ndarray:
    """
    Exact Euclidean distance from every pixel to the nearest ground-truth boundary pixel
    """
    bits = as_mask(gt)
    if not bits.any():
        raise ValueError("boundary distance of an empty mask is undefined")
    boundary = mask_boundary(bits)
    return ndimage.distance_transform_edt(~boundary)
