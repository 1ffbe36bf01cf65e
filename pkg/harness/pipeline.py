"""
Main pipeline orchestrator: enhancement, tumor-region detection, ROI extraction and the
multiscale cascaded multitask network, fold by fold
"""

import json
import os
import time
from typing import Dict, List, Optional, Sequence

import pandas as pd

from config import SYNTH_SAMPLES
from datapipe.folds import FoldPlan, stratified_kfold
from datapipe.manifest import load_manifest, save_manifest
from datapipe.phantoms import synth_generate
from datapipe.preprocessing import preprocess_samples
from datapipe.sample import Sample
from harness.checkpoint import Checkpoint
from harness.reports import MetricsReport, NetworkPredictor, SegmentationMetrics, merge_reports
from harness.roi_extraction import cmd_extract_roi
from harness.run_config import RunConfig
from harness.trainer import cmd_train_main, cmd_train_region
from utils.errors import DataError, PipelineError
from utils.logger import log_data_quality_check, log_pipeline_step, set_run_context, setup_logger


class BrainTumorPipeline:
    """
    Runs generate/load -> preprocess -> split -> (train region net -> extract ROI ->
    train main net -> evaluate) for each requested fold, writing every artifact under
    ``cfg.out_dir``
    """

    def __init__(self, cfg: RunConfig, deterministic: bool = True):
        self.logger = setup_logger("BrainTumorPipeline")
        self.logger.info("Initializing brain tumor segmentation pipeline")
        self.cfg = cfg.validate()
        self.deterministic = deterministic
        self.metrics = SegmentationMetrics(cfg.threshold)

        self.samples: List[Sample] = []
        self.plan: Optional[FoldPlan] = None
        self.region_checkpoints: Dict[int, Checkpoint] = {}
        self.main_checkpoints: Dict[int, Checkpoint] = {}
        self.crops: Dict[int, List[Sample]] = {}
        self.fold_reports: Dict[int, MetricsReport] = {}

    def _path(self, *parts: str) -> str:
        return os.path.join(self.cfg.out_dir, *parts)

    def run_full_pipeline(self, folds: Optional[Sequence[int]] = None, synth_n: int = SYNTH_SAMPLES) -> MetricsReport:
        try:
            started = time.perf_counter()
            self.logger.info("Starting full pipeline execution")
            self.load_data(synth_n)
            self.preprocess_data()
            self.plan_folds()
            for fold in (list(folds) if folds is not None else [self.cfg.fold]):
                self.run_fold(fold)
            report = self.build_report(time.perf_counter() - started)
            self.logger.info("Pipeline execution completed successfully")
            return report
        except PipelineError as e:
            self.logger.error(f"Pipeline execution failed: {str(e)}")
            raise

    def load_data(self, synth_n: int = SYNTH_SAMPLES) -> List[Sample]:
        """
        Samples from the configured manifest, or freshly generated phantoms when none is set
        """
        if self.cfg.manifest:
            self.logger.info(f"Loading manifest {self.cfg.manifest}...")
            self.samples = load_manifest(self.cfg.manifest)
        else:
            self.logger.info(f"Generating {synth_n} phantoms (seed {self.cfg.seed})...")
            self.samples = synth_generate(synth_n, self.cfg.seed, size=self.cfg.region.input_size)
            save_manifest(self.samples, self._path("data", "manifest.csv"))
        if not self.samples:
            raise DataError("no samples to process")
        self.log_data_summary()
        return self.samples

    def preprocess_data(self) -> List[Sample]:
        if not self.cfg.enhance:
            self.logger.info("Enhancement disabled; using raw images")
            return self.samples
        self.samples = preprocess_samples(self.samples, self.cfg.enhancement)
        log_pipeline_step("Enhancement", "COMPLETED", f"{len(self.samples)} samples")
        return self.samples

    def plan_folds(self) -> FoldPlan:
        if self.cfg.fold_plan and os.path.exists(self.cfg.fold_plan):
            self.plan = FoldPlan.load(self.cfg.fold_plan)
        else:
            self.plan = stratified_kfold(self.samples, self.cfg.num_folds, self.cfg.seed, self.cfg.patient_disjoint)
        self.plan.save(self._path("fold_plan.json"))
        log_data_quality_check("Fold Sizes", "PASS", str(self.plan.sizes()))
        return self.plan

    def run_fold(self, fold: int) -> MetricsReport:
        set_run_context(fold=fold)
        try:
            return self._run_fold(fold)
        finally:
            set_run_context(fold=None, stage=None)

    def _run_fold(self, fold: int) -> MetricsReport:
        cfg = self.cfg.with_overrides(fold=fold)
        fold_dir = f"fold{fold}"
        log_pipeline_step(f"Fold {fold}", "STARTED")

        set_run_context(stage="region")
        region = cmd_train_region(cfg, self.samples, self.plan, self._path(fold_dir, "region.ckpt"))
        self.region_checkpoints[fold] = region

        set_run_context(stage="roi")
        crops, outcomes = cmd_extract_roi(region, self.samples)
        outcomes.to_csv(self._path(fold_dir, "roi_outcomes.csv"), index=False)
        if not crops:
            raise DataError(f"fold {fold}: every sample was dropped during ROI extraction")
        self.crops[fold] = crops

        set_run_context(stage="main")
        main = cmd_train_main(cfg, crops, self.plan, self._path(fold_dir, "main.ckpt"))
        self.main_checkpoints[fold] = main

        set_run_context(stage="evaluate")
        fold_report = self.metrics.calculate_all_metrics({fold: NetworkPredictor(main)}, crops, self.plan)
        self.fold_reports[fold] = fold_report
        log_pipeline_step(f"Fold {fold}", "COMPLETED", f"DSC {fold_report.aggregate['dice']:.4f}")
        return fold_report

    def build_report(self, wall_clock_seconds: float) -> MetricsReport:
        report = merge_reports([self.fold_reports[f] for f in sorted(self.fold_reports)])
        report.fingerprint = self.cfg.fingerprint()
        report.wall_clock_seconds = wall_clock_seconds
        report.save(self._path("report.json"), self.deterministic)
        with open(self._path("config.json"), "w") as f:
            json.dump(self.cfg.to_dict(include_paths=True), f, sort_keys=True, indent=2)
        self.log_metrics_summary(report)
        self.logger.info(f"Wall clock {wall_clock_seconds:.1f}s")
        return report

    def export_xlsx(self, report: MetricsReport) -> str:
        return report.export_xlsx(self._path("report.xlsx"))

    def log_data_summary(self):
        self.logger.info("=== Data Summary ===")
        counts = pd.Series([s.label for s in self.samples]).value_counts().sort_index()
        for label, count in counts.items():
            self.logger.info(f"class {label}: {count} samples")
        self.logger.info(f"extents: {sorted({s.shape for s in self.samples})}")
        self.logger.info("====================")

    def log_metrics_summary(self, report: MetricsReport):
        self.logger.info("=== Metrics Summary ===")
        for name, value in report.aggregate.items():
            if value is None:
                self.logger.warning(f"{name}: not available")
            else:
                self.logger.info(f"{name}: {value:.4f}")
        self.logger.info("=======================")
