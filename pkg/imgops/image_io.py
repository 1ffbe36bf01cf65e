"""
8-bit grayscale PNG / PGM reading and writing; intensities map linearly 0-255 <-> [0, 1]
"""

import os

import numpy as np
from PIL import Image as PILImage

from utils.errors import DataError, ShapeError


def as_image(pixels) -> np.ndarray:
    """
    Validate a 2-D intensity grid in [0, 1]
    """
    image = np.asarray(pixels)
    if image.ndim != 2 or min(image.shape) < 1:
        raise ShapeError(f"image must be a non-empty 2-D grid, got shape {image.shape}")
    if image.dtype.kind != "f":
        image = image.astype(np.float64)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return image


def as_mask(bits) -> np.ndarray:
    """
    Validate a strictly binary 2-D grid and return it as bool
    """
    mask = np.asarray(bits)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask must be strictly binary (0/1)")
        mask = mask.astype(bool)
    return mask


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"image file not found: {path}")
    with PILImage.open(path) as handle:
        pixels = np.asarray(handle.convert("L"), dtype=np.float64)
    return pixels / 255.0


def write_image(path: str, image: np.ndarray) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    PILImage.fromarray(to_uint8(image)).save(path)


def read_mask(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"mask file not found: {path}")
    with PILImage.open(path) as handle:
        pixels = np.asarray(handle.convert("L"))
    if not np.isin(pixels, (0, 255)).all():
        raise DataError(f"mask {path} is not strictly {{0, 255}}")
    return pixels == 255


def write_mask(path: str, mask: np.ndarray) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    bits = np.asarray(mask, dtype=bool)
    PILImage.fromarray(np.where(bits, 255, 0).astype(np.uint8)).save(path)


OVERLAY_ALPHA = 0.4
PREDICTION_COLOR = (255, 0, 0)
TRUTH_COLOR = (0, 255, 0)


def overlay_rgb(image: np.ndarray, truth: np.ndarray, pred: np.ndarray, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """
    H×W×3 uint8 view of the slice with the reference mask tinted green and the
    prediction tinted red; agreement shows as yellow
    """
    gray = to_uint8(as_image(image)).astype(np.float64)
    truth, pred = as_mask(truth), as_mask(pred)
    if truth.shape != gray.shape or pred.shape != gray.shape:
        raise ShapeError(f"overlay masks {truth.shape}/{pred.shape} do not match image {gray.shape}")
    tint = np.zeros(gray.shape + (3,))
    tint[truth] += TRUTH_COLOR
    tint[pred] += PREDICTION_COLOR
    tinted = truth | pred
    rgb = np.repeat(gray[..., None], 3, axis=2)
    rgb[tinted] = (1 - alpha) * rgb[tinted] + alpha * np.minimum(tint[tinted], 255)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def write_overlay(path: str, image: np.ndarray, truth: np.ndarray, pred: np.ndarray) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    PILImage.fromarray(overlay_rgb(image, truth, pred)).save(path)
