"""
Evaluation metrics on hard masks and class labels (numpy, not differentiable)
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from config import CLASS_NAMES, NUM_CLASSES
from imgops.image_io import as_mask
from utils.errors import ShapeError

# Published confusion matrix of the aggregated multitask model (rows true, cols predicted,
# order Glioma / Pituitary / Meningioma) and the headline numbers it is quoted with
PUBLISHED_CONFUSION_COUNTS = np.array(
    [
        [1402, 14, 10],
        [10, 903, 17],
        [8, 9, 691],
    ],
    dtype=np.int64,
)
PUBLISHED_ROW_RATES = (0.98317, 0.97097, 0.97597)
PUBLISHED_MACRO_RATE = 0.9767
PUBLISHED_HEADLINE_ACCURACY = 0.97981

# DCS / mean IoU percentages reported for each ablation row
PUBLISHED_PREPROCESSING_TABLE = [
    {"variant": "whole image, no enhancement", "dice": 73.0, "mean_iou": 80.06},
    {"variant": "whole image, enhanced", "dice": 75.5, "mean_iou": 81.9},
    {"variant": "ROI crop, enhanced", "dice": 84.42, "mean_iou": 91.51},
]
PUBLISHED_ARCHITECTURE_TABLE = [
    {"variant": "multiscale", "dice": 86.94, "mean_iou": 91.21, "dice_whole": 78.62, "mean_iou_whole": 86.38},
    {"variant": "common cascade", "dice": 90.04, "mean_iou": 93.17, "dice_whole": 80.14, "mean_iou_whole": 90.01},
    {"variant": "full cascade", "dice": 94.11, "mean_iou": 95.28, "dice_whole": 84.73, "mean_iou_whole": 92.56},
]
PUBLISHED_MULTITASK_TABLE = [
    {"variant": "full cascade", "dice": 94.11, "mean_iou": 95.28, "accuracy": None},
    {"variant": "multitask", "dice": 95.93, "mean_iou": 96.84, "accuracy": 95.10},
    {"variant": "multitask + aggregation", "dice": 96.27, "mean_iou": 97.05, "accuracy": 97.981},
]


def published_reference_note() -> str:
    counts = PUBLISHED_CONFUSION_COUNTS
    trace, total = int(np.trace(counts)), int(counts.sum())
    return (
        f"Published confusion counts give accuracy {trace}/{total} = {100.0 * trace / total:.3f}%, "
        f"while the headline classification accuracy is {100.0 * PUBLISHED_HEADLINE_ACCURACY:.3f}%; "
        "the two published figures are inconsistent and only the count arithmetic is reproduced here. "
        "The published per-class 'precision' column is a row-normalized rate; its Meningioma entry "
        f"reads {100.0 * PUBLISHED_ROW_RATES[2]:.3f}% where the counts give {counts[2, 2]}/{counts[2].sum()} "
        f"= {100.0 * counts[2, 2] / counts[2].sum():.3f}%."
    )


def _pair(gt, pred) -> Tuple[np.ndarray, np.ndarray]:
    g, s = as_mask(gt), as_mask(pred)
    if g.shape != s.shape:
        raise ShapeError(f"mask extents differ: {g.shape} vs {s.shape}")
    return g, s


def dice(gt, pred) -> float:
    g, s = _pair(gt, pred)
    total = int(g.sum()) + int(s.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(g, s).sum()) / total


def iou(gt, pred) -> float:
    g, s = _pair(gt, pred)
    union = int(np.logical_or(g, s).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(g, s).sum()) / union


def mean_iou(gt, pred) -> float:
    """
    Mean of the tumor and background IoUs: n_jj / (Σ_i n_ij + Σ_i n_ji - n_jj)
    """
    g, s = _pair(gt, pred)
    return 0.5 * (iou(g, s) + iou(~g, ~s))


def pixel_accuracy(gt, pred) -> float:
    g, s = _pair(gt, pred)
    return float(np.mean(g == s))


def classification_accuracy(true_labels: Sequence[int], pred_labels: Sequence[int]) -> float:
    true, pred = _labels(true_labels, pred_labels, NUM_CLASSES)
    if len(true) == 0:
        raise ValueError("accuracy of an empty label list is undefined")
    return float(np.mean(true == pred))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes"""
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion counts must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(np.asarray(self.counts).sum())

    def row_rates(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=np.float64)
        rows = counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(counts) / rows, np.nan)

    def macro_rate(self) -> float:
        return float(np.nanmean(self.row_rates()))

    def accuracy(self) -> float:
        counts = np.asarray(self.counts)
        return float(np.trace(counts)) / self.total

    def to_rows(self, class_names: Sequence[str] = CLASS_NAMES) -> List[dict]:
        rows = []
        for j, name in enumerate(class_names):
            row = {"true": name}
            for k, predicted in enumerate(class_names):
                row[predicted] = int(self.counts[j][k])
            row["row_rate"] = float(self.row_rates()[j])
            rows.append(row)
        return rows


def _labels(true_labels, pred_labels, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if true.shape != pred.shape:
        raise ShapeError(f"label lists differ in length: {true.size} vs {pred.size}")
    for labels in (true, pred):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    return true, pred


def confusion_and_rates(
    true_labels: Sequence[int],
    pred_labels: Sequence[int],
    num_classes: int = NUM_CLASSES,
) -> Tuple[ConfusionMatrix, np.ndarray, float]:
    """
    Returns (matrix, per-class row rates counts[j][j] / row_sum(j), overall accuracy)
    """
    true, pred = _labels(true_labels, pred_labels, num_classes)
    if true.size:
        counts = confusion_matrix(true, pred, labels=np.arange(num_classes)).astype(np.int64)
    else:
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    matrix = ConfusionMatrix(counts)
    accuracy = matrix.accuracy() if matrix.total else float("nan")
    return matrix, matrix.row_rates(), accuracy
