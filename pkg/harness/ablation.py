"""
Variant ladder reproducing the structure of the published ablation tables at desk scale:

  preprocessing   whole image without / with enhancement, then the ROI crop
  architecture    multiscale, + common cascade, + full cascade (optionally also on whole
                  images, without tumor region detection)
  multitask       full cascade, + classification head, + aggregation
  confusion       confusion matrix of the fully enabled variant
"""

import json
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from datapipe.folds import FoldPlan, stratified_kfold
from datapipe.preprocessing import preprocess_samples
from datapipe.sample import Sample
from harness.reports import MetricsReport, NetworkPredictor, SegmentationMetrics, merge_reports
from harness.roi_extraction import extract_roi_samples
from harness.run_config import RunConfig
from harness.trainer import cmd_train_main, cmd_train_region, network_from_checkpoint
from lossmetrics.metrics import (
    PUBLISHED_ARCHITECTURE_TABLE,
    PUBLISHED_MULTITASK_TABLE,
    PUBLISHED_PREPROCESSING_TABLE,
    ConfusionMatrix,
    published_reference_note,
)
from nets.network_config import NetworkConfig
from nets.region_net import forward_region
from utils.errors import NumericError
from utils.logger import log_alert, log_pipeline_step

TABLES = ("preprocessing", "architecture", "multitask")


@dataclass(frozen=True)
class Variant:
    key: str
    label: str
    network: Optional[NetworkConfig]  # None: region-style net without map input


def architecture_variants(base: NetworkConfig) -> List[Variant]:
    plain = base.with_flags(multiscale=True, multitask=False, aggregation=False, scaled_map_injection=False)
    return [
        Variant("multiscale", "multiscale", plain.with_flags(cascade_level="none")),
        Variant("common_cascade", "common cascade", plain.with_flags(cascade_level="common")),
        Variant("full_cascade", "full cascade", plain.with_flags(cascade_level="full")),
    ]


def multitask_variants(base: NetworkConfig) -> List[Variant]:
    full = base.with_flags(multiscale=True, cascade_level="full", scaled_map_injection=False)
    return [
        Variant("multitask", "multitask", full.with_flags(multitask=True, aggregation=False)),
        Variant("aggregation", "multitask + aggregation", full.with_flags(multitask=True, aggregation=True)),
    ]


class AblationRunner:
    def __init__(self, cfg: RunConfig, folds: Optional[Sequence[int]] = None, whole_image_columns: bool = False):
        self.logger = log_pipeline_step("AblationRunner", "STARTED")
        self.cfg = cfg
        self.folds = list(folds) if folds is not None else [cfg.fold]
        self.whole_image_columns = whole_image_columns
        self.metrics = SegmentationMetrics(cfg.threshold)
        self.results: Dict[str, MetricsReport] = {}

    def _evaluate(self, key: str, checkpoints: Dict[int, object], samples, plan) -> MetricsReport:
        predictors = {fold: NetworkPredictor(ckpt) for fold, ckpt in checkpoints.items()}
        report = self.metrics.calculate_all_metrics(predictors, samples, plan)
        self.results[key] = report
        self.logger.info(
            f"{key}: DSC {report.aggregate['dice']:.4f} mean IoU {report.aggregate['mean_iou']:.4f}"
        )
        return report

    def _train_region_variant(self, key, cfg, samples, plan) -> Dict[int, object]:
        checkpoints = {}
        for fold in self.folds:
            checkpoints[fold] = cmd_train_region(replace(cfg, fold=fold), samples, plan)
        self._evaluate(key, checkpoints, samples, plan)
        return checkpoints

    def _train_main_variant(self, key, network, samples, plan) -> MetricsReport:
        checkpoints = {}
        for fold in self.folds:
            cfg = replace(self.cfg, fold=fold, network=network)
            checkpoints[fold] = cmd_train_main(cfg, samples, plan)
        return self._evaluate(key, checkpoints, samples, plan)

    def _with_region_maps(self, region_ckpt, samples: Sequence[Sample]) -> List[Sample]:
        net = network_from_checkpoint(region_ckpt)
        return [replace(s, prelim_map=forward_region(net, s.image).values[0].astype(np.float64)) for s in samples]

    def run(self, samples: Sequence[Sample]) -> Dict:
        cfg = self.cfg
        plan = stratified_kfold(samples, cfg.num_folds, cfg.seed, cfg.patient_disjoint)
        enhanced = preprocess_samples(samples, cfg.enhancement)

        self._train_region_variant("whole_raw", cfg, samples, plan)
        # ROI crops come from each fold's own enhanced region net, so held-out samples are
        # cropped by a detector that never saw them
        region_ckpts = self._train_region_variant("whole_enhanced", cfg, enhanced, plan)
        crops_by_fold: Dict[int, List[Sample]] = {}
        for fold, ckpt in region_ckpts.items():
            crops_by_fold[fold], _ = extract_roi_samples(
                network_from_checkpoint(ckpt), enhanced, cfg.half_window, cfg.threshold, cfg.crop_mode, cfg.empty_fallback
            )

        crop_size = 2 * cfg.half_window
        crop_region = replace(cfg.region, input_size=crop_size)
        crop_network = replace(cfg.network, input_size=crop_size)
        per_fold = {}
        for fold in self.folds:
            per_fold[fold] = self._run_cropped_fold(fold, crops_by_fold[fold], plan, crop_region, crop_network)
        for key in per_fold[self.folds[0]]:
            self.results[key] = merge_reports([per_fold[fold][key] for fold in self.folds])

        if self.whole_image_columns:
            whole_network = replace(cfg.network, input_size=cfg.region.input_size)
            mapped = {fold: self._with_region_maps(region_ckpts[fold], enhanced) for fold in self.folds}
            for variant in architecture_variants(whole_network):
                reports = []
                for fold in self.folds:
                    single = AblationRunner(cfg, [fold])
                    reports.append(single._train_main_variant(variant.key, variant.network, mapped[fold], plan))
                self.results[f"{variant.key}_whole"] = merge_reports(reports)

        return self.build_report(plan)

    def _run_cropped_fold(self, fold, crops, plan, crop_region, crop_network) -> Dict[str, MetricsReport]:
        single = AblationRunner(replace(self.cfg, region=crop_region), [fold])
        single._train_region_variant("crop_enhanced", single.cfg, crops, plan)
        for variant in architecture_variants(crop_network) + multitask_variants(crop_network):
            single._train_main_variant(variant.key, variant.network, crops, plan)
        return single.results

    def build_report(self, plan: FoldPlan) -> Dict:
        def row(label, key, with_accuracy=False):
            aggregate = self.results[key].aggregate
            entry = {"variant": label, "dice": aggregate["dice"], "mean_iou": aggregate["mean_iou"]}
            if with_accuracy:
                entry["accuracy"] = aggregate["accuracy"]
            return entry

        preprocessing = [
            row("whole image, no enhancement", "whole_raw"),
            row("whole image, enhanced", "whole_enhanced"),
            row("ROI crop, enhanced", "crop_enhanced"),
        ]
        architecture = [row(v.label, v.key) for v in architecture_variants(self.cfg.network)]
        if self.whole_image_columns:
            for entry, variant in zip(architecture, architecture_variants(self.cfg.network)):
                whole = self.results[f"{variant.key}_whole"].aggregate
                entry["dice_whole"] = whole["dice"]
                entry["mean_iou_whole"] = whole["mean_iou"]
        multitask = [
            row("full cascade", "full_cascade", with_accuracy=True),
            row("multitask", "multitask", with_accuracy=True),
            row("multitask + aggregation", "aggregation", with_accuracy=True),
        ]

        confusion: ConfusionMatrix = self.results["aggregation"].confusion
        return {
            "fingerprint": self.cfg.fingerprint(),
            "folds": self.folds,
            "fold_sizes": plan.sizes(),
            "tables": {"preprocessing": preprocessing, "architecture": architecture, "multitask": multitask},
            "confusion": {
                "counts": np.asarray(confusion.counts).tolist(),
                "row_rates": [float(r) for r in confusion.row_rates()],
                "macro_rate": confusion.macro_rate(),
                "accuracy": confusion.accuracy(),
            },
            "reference": {
                "note": "published full-scale numbers on the real dataset; not reproduced at desk scale",
                "preprocessing": PUBLISHED_PREPROCESSING_TABLE,
                "architecture": PUBLISHED_ARCHITECTURE_TABLE,
                "multitask": PUBLISHED_MULTITASK_TABLE,
                "consistency": published_reference_note(),
            },
        }


def cmd_ablate(
    cfg: RunConfig,
    samples: Sequence[Sample],
    folds: Optional[Sequence[int]] = None,
    whole_image_columns: bool = False,
) -> Dict:
    logger = log_pipeline_step("Ablation", "STARTED", f"folds={list(folds) if folds else [cfg.fold]}")
    report = AblationRunner(cfg, folds, whole_image_columns).run(samples)
    for table in TABLES:
        logger.info(f"{table}:\n{render_table(report['tables'][table])}")
    return report


def ablation_json(report: Dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def render_table(rows: List[Dict]) -> str:
    table = pd.DataFrame(rows).set_index("variant").astype(float)
    return (table * 100.0).to_string(float_format=lambda v: f"{v:8.3f}", na_rep="       -")


def render_report(report: Dict) -> str:
    parts = []
    for table in TABLES:
        parts.append(f"== {table} (%) ==")
        parts.append(render_table(report["tables"][table]))
        parts.append("")
    confusion = report["confusion"]
    parts.append("== confusion (rows true, columns predicted) ==")
    parts.append(pd.DataFrame(confusion["counts"]).to_string())
    parts.append(f"row rates {['%.3f' % (100 * r) for r in confusion['row_rates']]}  macro {100 * confusion['macro_rate']:.3f}")
    parts.append("")
    parts.append("== reference (full scale, real dataset; not reproduced here) ==")
    for table in TABLES:
        parts.append(pd.DataFrame(report["reference"][table]).set_index("variant").to_string())
    parts.append(report["reference"]["consistency"])
    return "\n".join(parts)


def save_ablation(report: Dict, out_dir: str, xlsx: bool = False) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, "ablation.json"), "text": os.path.join(out_dir, "ablation.txt")}
    with open(paths["json"], "w") as f:
        f.write(ablation_json(report))
    with open(paths["text"], "w") as f:
        f.write(render_report(report))
    if xlsx:
        paths["xlsx"] = os.path.join(out_dir, "ablation.xlsx")
        with pd.ExcelWriter(paths["xlsx"], engine="openpyxl") as writer:
            for table in TABLES:
                pd.DataFrame(report["tables"][table]).to_excel(writer, sheet_name=table.title(), index=False)
            pd.DataFrame(report["confusion"]["counts"]).to_excel(writer, sheet_name="Confusion", index=False)
    return paths


def compare_golden(report: Dict, golden_path: str) -> bool:
    """
    True if the report matches the stored golden file bitwise. A missing golden file is
    established from this report (returns False); a mismatch raises NumericError.
    """
    text = ablation_json(report)
    if not os.path.exists(golden_path):
        directory = os.path.dirname(golden_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(golden_path, "w") as f:
            f.write(text)
        log_pipeline_step("Golden report", "COMPLETED", f"established {golden_path}")
        return False
    with open(golden_path) as f:
        golden = f.read()
    if golden != text:
        log_alert("Golden mismatch", f"ablation report differs from {golden_path}", "ERROR")
        raise NumericError(f"ablation report does not match golden file {golden_path}")
    return True
