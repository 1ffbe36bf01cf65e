import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from config import CLASS_NAMES
from datapipe.folds import FoldPlan
from datapipe.sample import Sample
from harness.checkpoint import Checkpoint, checkpoint_load
from harness.trainer import network_from_checkpoint
from imgops.image_io import write_overlay
from imgops.morphology import binarize
from lossmetrics.metrics import (
    ConfusionMatrix,
    classification_accuracy,
    confusion_and_rates,
    dice,
    iou,
    mean_iou,
    pixel_accuracy,
)
from nets.mscmt_net import forward_mscmt
from nets.region_net import forward_region
from utils.errors import DataError
from utils.logger import log_pipeline_step

SEGMENTATION_METRICS = ("dice", "iou", "mean_iou", "pixel_accuracy")


class Predictor(Protocol):
    def predict(self, sample: Sample) -> Tuple[np.ndarray, Optional[int]]:
        """(H×W tumor probability map, predicted class or None)"""


class NetworkPredictor:
    def __init__(self, ckpt: Checkpoint):
        self.stage = ckpt.stage
        self.net = network_from_checkpoint(ckpt)

    def predict(self, sample: Sample) -> Tuple[np.ndarray, Optional[int]]:
        if self.stage == "region":
            return forward_region(self.net, sample.image).values[0], None
        pair = forward_mscmt(self.net, sample.image, sample.prelim_map)
        label = None if pair.class_probs is None else int(np.argmax(pair.class_probs.values))
        return pair.seg_map.values[0], label


@dataclass
class MetricsReport:
    """
    Per-fold hard metrics and their unweighted mean over folds; the confusion matrix
    pools every evaluated sample
    """
    folds: List[Dict] = field(default_factory=list)
    aggregate: Dict[str, Optional[float]] = field(default_factory=dict)
    confusion: Optional[ConfusionMatrix] = None
    fingerprint: str = ""
    wall_clock_seconds: Optional[float] = None

    @property
    def evaluated(self) -> int:
        return int(sum(f["samples"] for f in self.folds))

    def to_dict(self, deterministic: bool = True) -> Dict:
        data = {
            "fingerprint": self.fingerprint,
            "folds": self.folds,
            "aggregate": self.aggregate,
            "evaluated_samples": self.evaluated,
        }
        if self.confusion is not None:
            data["confusion"] = {
                "classes": list(CLASS_NAMES),
                "counts": np.asarray(self.confusion.counts).tolist(),
                "row_rates": [float(r) for r in self.confusion.row_rates()],
                "macro_rate": self.confusion.macro_rate(),
                "accuracy": self.confusion.accuracy(),
            }
        if not deterministic:
            data["wall_clock_seconds"] = self.wall_clock_seconds
        return data

    def to_json(self, deterministic: bool = True) -> str:
        return json.dumps(self.to_dict(deterministic), sort_keys=True, indent=2)

    def fold_table(self) -> pd.DataFrame:
        table = pd.DataFrame(self.folds)
        mean_row = {"fold": "mean", "samples": self.evaluated, **self.aggregate}
        return pd.concat([table, pd.DataFrame([mean_row])], ignore_index=True)

    def save(self, path: str, deterministic: bool = True) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            f.write(self.to_json(deterministic))
        return path

    def export_xlsx(self, path: str) -> str:
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            self.fold_table().to_excel(writer, sheet_name="Folds", index=False)
            if self.confusion is not None:
                pd.DataFrame(self.confusion.to_rows()).to_excel(writer, sheet_name="Confusion", index=False)
        return path


class SegmentationMetrics:
    """
    Hard (thresholded) evaluation of held-out folds
    """

    def __init__(self, threshold: float = 0.5):
        self.logger = log_pipeline_step("SegmentationMetrics", "STARTED")
        self.threshold = threshold

    def calculate_fold_metrics(self, fold: int, predictor: Predictor, samples: Sequence[Sample]) -> Tuple[Dict, List, List]:
        if not samples:
            raise DataError(f"fold {fold} has no samples to evaluate")
        scores = {name: [] for name in SEGMENTATION_METRICS}
        true_labels, pred_labels = [], []
        for sample in sorted(samples, key=lambda s: s.id):
            prob_map, label = predictor.predict(sample)
            pred = binarize(prob_map, self.threshold)
            scores["dice"].append(dice(sample.mask, pred))
            scores["iou"].append(iou(sample.mask, pred))
            scores["mean_iou"].append(mean_iou(sample.mask, pred))
            scores["pixel_accuracy"].append(pixel_accuracy(sample.mask, pred))
            if label is not None:
                true_labels.append(sample.label)
                pred_labels.append(label)

        metrics = {"fold": int(fold), "samples": len(samples)}
        metrics.update({name: float(np.mean(values)) for name, values in scores.items()})
        metrics["accuracy"] = classification_accuracy(true_labels, pred_labels) if pred_labels else None
        self.logger.info(
            f"fold {fold}: DSC {metrics['dice']:.4f} mean IoU {metrics['mean_iou']:.4f}"
            + (f" accuracy {metrics['accuracy']:.4f}" if metrics["accuracy"] is not None else "")
        )
        return metrics, true_labels, pred_labels

    def calculate_all_metrics(
        self,
        predictors: Dict[int, Predictor],
        samples: Sequence[Sample],
        plan: FoldPlan,
    ) -> MetricsReport:
        started = time.perf_counter()
        folds, all_true, all_pred = [], [], []
        for fold in sorted(predictors):
            _, test = plan.split(samples, fold)
            metrics, true_labels, pred_labels = self.calculate_fold_metrics(fold, predictors[fold], test)
            folds.append(metrics)
            all_true.extend(true_labels)
            all_pred.extend(pred_labels)

        aggregate = {name: float(np.mean([f[name] for f in folds])) for name in SEGMENTATION_METRICS}
        accuracies = [f["accuracy"] for f in folds if f["accuracy"] is not None]
        aggregate["accuracy"] = float(np.mean(accuracies)) if accuracies else None

        confusion = None
        if all_pred:
            confusion, _, _ = confusion_and_rates(all_true, all_pred)
        return MetricsReport(folds=folds, aggregate=aggregate, confusion=confusion,
                             wall_clock_seconds=time.perf_counter() - started)


def merge_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """
    Combine single-fold reports evaluated on different sample sets (per-fold ROI crops)
    """
    folds = sorted((f for report in reports for f in report.folds), key=lambda f: f["fold"])
    aggregate = {name: float(np.mean([f[name] for f in folds])) for name in SEGMENTATION_METRICS}
    accuracies = [f["accuracy"] for f in folds if f["accuracy"] is not None]
    aggregate["accuracy"] = float(np.mean(accuracies)) if accuracies else None
    confusion = None
    matrices = [r.confusion for r in reports if r.confusion is not None]
    if matrices:
        confusion = ConfusionMatrix(sum(np.asarray(m.counts) for m in matrices))
    clocks = [r.wall_clock_seconds for r in reports if r.wall_clock_seconds is not None]
    return MetricsReport(folds=folds, aggregate=aggregate, confusion=confusion,
                         wall_clock_seconds=float(sum(clocks)) if clocks else None)


def _load_predictors(checkpoint_paths: Sequence[str]) -> Tuple[Dict[int, Predictor], List[str], float]:
    predictors: Dict[int, Predictor] = {}
    fingerprints = set()
    threshold = 0.5
    for path in checkpoint_paths:
        ckpt = checkpoint_load(path)
        cfg = ckpt.run_config
        if cfg.fold in predictors:
            raise DataError(f"two checkpoints evaluate fold {cfg.fold}")
        predictors[cfg.fold] = NetworkPredictor(ckpt)
        fingerprints.add(ckpt.fingerprint)
        threshold = cfg.threshold
    return predictors, sorted(fingerprints), threshold


def cmd_evaluate(
    checkpoint_paths: Sequence[str],
    samples: Sequence[Sample],
    plan: FoldPlan,
) -> MetricsReport:
    """
    One checkpoint per held-out fold (the fold recorded in its config)
    """
    predictors, fingerprints, threshold = _load_predictors(checkpoint_paths)
    report = SegmentationMetrics(threshold).calculate_all_metrics(predictors, samples, plan)
    report.fingerprint = ",".join(fingerprints)
    return report


def export_overlays(
    checkpoint_paths: Sequence[str],
    samples: Sequence[Sample],
    plan: FoldPlan,
    out_dir: str,
) -> List[str]:
    """
    fold<k>/<sample id>.png for every held-out sample: reference mask green, thresholded
    prediction red
    """
    predictors, _, threshold = _load_predictors(checkpoint_paths)
    logger = log_pipeline_step("Overlay export", "STARTED", f"{len(predictors)} folds")
    paths = []
    for fold in sorted(predictors):
        _, test = plan.split(samples, fold)
        for sample in sorted(test, key=lambda s: s.id):
            prob_map, _ = predictors[fold].predict(sample)
            path = os.path.join(out_dir, f"fold{fold}", f"{sample.id}.png")
            write_overlay(path, sample.image, sample.mask, binarize(prob_map, threshold))
            paths.append(path)
    logger.info(f"Wrote {len(paths)} overlays under {out_dir}")
    return paths
