"""
Differentiable training objectives: soft Dice, boundary-weighted soft Dice,
categorical cross-entropy and their weighted sum
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from config import ALPHA_CLS, ALPHA_SEG, OMEGA0, SIGMA
from diffcore.ops import add, negative_log_likelihood, scale, soft_dice_loss
from diffcore.tensor import Tensor
from imgops.image_io import as_mask
from imgops.morphology import boundary_distance_map
from utils.errors import ConfigError, ShapeError

ProbMap = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    alpha_seg: float = ALPHA_SEG
    alpha_cls: float = ALPHA_CLS
    omega0: float = OMEGA0
    sigma: float = SIGMA
    # evaluate the boundary weight literally as 1 + ω0·exp(d / 2σ²)
    strict_printed_weight: bool = False

    def __post_init__(self):
        # alpha_cls = 0 switches the classification term off
        if self.alpha_seg <= 0 or self.alpha_cls < 0:
            raise ConfigError(f"alpha_seg must be > 0 and alpha_cls >= 0, got {self.alpha_seg}/{self.alpha_cls}")
        if self.omega0 < 0:
            raise ConfigError(f"omega0 must be >= 0, got {self.omega0}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")


def _as_probs(pred_probs: ProbMap) -> Tensor:
    probs = pred_probs if isinstance(pred_probs, Tensor) else Tensor(pred_probs)
    if probs.values.min() < 0.0 or probs.values.max() > 1.0:
        raise ValueError("predicted probabilities must lie in [0, 1]")
    return probs


def _check_extents(gt: np.ndarray, probs: Tensor) -> np.ndarray:
    mask = as_mask(gt)
    if probs.shape[-2:] != mask.shape or probs.size != mask.size:
        raise ShapeError(f"ground truth {mask.shape} and prediction {probs.shape} extents differ")
    return mask


def region_loss(gt: np.ndarray, pred_probs: ProbMap) -> Tensor:
    """1 - soft Dice, summing the probabilities directly"""
    probs = _as_probs(pred_probs)
    mask = _check_extents(gt, probs)
    return soft_dice_loss(probs, mask)


def weight_map(gt: np.ndarray, w: LossWeights) -> np.ndarray:
    """
    Boundary emphasis W(x) = 1 + ω0·exp(-d(x)² / 2σ²), d = distance to the nearest
    ground-truth boundary pixel. With ``strict_printed_weight`` the exponent is d / 2σ²,
    which grows without bound away from the boundary.
    """
    distance = boundary_distance_map(gt)
    two_sigma_sq = 2.0 * w.sigma * w.sigma
    if w.strict_printed_weight:
        return 1.0 + w.omega0 * np.exp(distance / two_sigma_sq)
    return 1.0 + w.omega0 * np.exp(-(distance * distance) / two_sigma_sq)


def weighted_dice_loss(gt: np.ndarray, pred_probs: ProbMap, w: LossWeights) -> Tensor:
    """
    1 - 2·Σ W·g·s / (Σ W·g + Σ W·s); zero at a perfect prediction
    """
    probs = _as_probs(pred_probs)
    mask = _check_extents(gt, probs)
    return soft_dice_loss(probs, mask, weights=weight_map(mask, w))


def classification_loss(true_class: int, probs: Union[Tensor, np.ndarray]) -> Tensor:
    """-log p[true_class], probabilities clamped at 1e-12"""
    distribution = probs if isinstance(probs, Tensor) else Tensor(probs)
    return negative_log_likelihood(distribution, int(true_class))


def combined_loss(l_seg: Tensor, l_cls: Tensor, w: LossWeights) -> Tensor:
    if l_seg.item() < 0 or l_cls.item() < 0:
        raise ValueError("component losses must be non-negative")
    return add(scale(l_seg, w.alpha_seg), scale(l_cls, w.alpha_cls))
