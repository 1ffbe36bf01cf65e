import json
import os
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from datapipe.folds import stratified_kfold
from datapipe.phantoms import synth_generate
from harness.ablation import ablation_json, cmd_ablate, compare_golden, render_report, save_ablation
from harness.checkpoint import checkpoint_save
from harness.reports import MetricsReport, SegmentationMetrics, cmd_evaluate, export_overlays, merge_reports
from harness.roi_extraction import cmd_extract_roi, locate_roi
from harness.trainer import cmd_train_main, cmd_train_region
from imgops.morphology import BoundingBox
from lossmetrics.metrics import ConfusionMatrix
from utils.errors import ConfigError, DataError, NumericError


class OraclePredictor:
    def predict(self, sample):
        return sample.mask.astype(np.float64), sample.label


class OffByOnePredictor:
    def predict(self, sample):
        return np.zeros(sample.shape), (sample.label + 1) % 3


def _blob_map(size, rows, cols):
    prob_map = np.full((size, size), 0.1)
    prob_map[rows, cols] = 0.9
    return prob_map


# ============================================================================
# ROI location
# ============================================================================

class TestLocateRoi:
    def test_centered_blob(self):
        box, status, center, _ = locate_roi(_blob_map(64, slice(28, 36), slice(28, 36)), 16)
        assert status == "cropped"
        assert center == (32, 32)
        assert box == BoundingBox(16, 48, 16, 48)

    def test_largest_blob_wins(self):
        prob_map = _blob_map(64, slice(20, 30), slice(20, 30))
        prob_map[50:52, 50:52] = 0.9
        _, _, center, _ = locate_roi(prob_map, 8)
        assert center == (25, 25)

    def test_hull_fills_ring_before_centering(self):
        rows, cols = np.mgrid[0:64, 0:64]
        radius = np.hypot(rows - 30, cols - 34)
        prob_map = np.where((radius >= 6) & (radius <= 9), 0.9, 0.1)
        _, status, center, _ = locate_roi(prob_map, 8)
        assert status == "cropped" and center == (30, 34)

    def test_corner_blob_dropped(self):
        box, status, center, reason = locate_roi(_blob_map(64, slice(0, 4), slice(0, 4)), 16)
        assert box is None and status == "dropped"
        assert center == (2, 2) and reason

    def test_corner_blob_clamped(self):
        box, status, _, _ = locate_roi(_blob_map(64, slice(0, 4), slice(0, 4)), 16, mode="clamp")
        assert status == "cropped" and box == BoundingBox(0, 32, 0, 32)

    def test_empty_prediction_falls_back_to_center(self):
        box, status, center, _ = locate_roi(np.zeros((64, 64)), 16)
        assert status == "fallback" and box == BoundingBox(16, 48, 16, 48) and center == (32, 32)

    def test_empty_prediction_dropped(self):
        box, status, _, _ = locate_roi(np.zeros((64, 64)), 16, empty_fallback="drop")
        assert box is None and status == "dropped"


class TestExtractRoi:
    def test_crops_every_kept_sample(self, tiny_run_config):
        samples = synth_generate(12, seed=0, size=32)
        plan = stratified_kfold(samples, 2, 0)
        ckpt = cmd_train_region(replace(tiny_run_config, epochs=1), samples, plan)
        crops, table = cmd_extract_roi(ckpt, samples)
        assert len(table) == 12
        assert len(crops) == int((table["status"] != "dropped").sum())
        for crop in crops:
            assert crop.shape == (16, 16) and crop.prelim_map.shape == (16, 16)
        kept = table[table["status"] != "dropped"]
        assert ((kept["row_hi"] - kept["row_lo"]) == 16).all()

    def test_clamp_keeps_everything(self, tiny_run_config):
        samples = synth_generate(6, seed=1, size=32)
        plan = stratified_kfold(samples, 2, 0)
        ckpt = cmd_train_region(replace(tiny_run_config, epochs=1, crop_mode="clamp"), samples, plan)
        crops, table = cmd_extract_roi(ckpt, samples)
        assert len(crops) == 6 and set(table["status"]) <= {"cropped", "fallback"}

    def test_needs_region_checkpoint(self, tiny_run_config, make_crops):
        crops = make_crops(6)
        ckpt = cmd_train_main(replace(tiny_run_config, epochs=1), crops, stratified_kfold(crops, 2, 0))
        with pytest.raises(ConfigError):
            cmd_extract_roi(ckpt, crops)


# ============================================================================
# Reports
# ============================================================================

class TestMetricsReport:
    def test_oracle_scores_one(self, make_crops):
        crops = make_crops(12)
        plan = stratified_kfold(crops, 2, 0)
        report = SegmentationMetrics().calculate_all_metrics({0: OraclePredictor(), 1: OraclePredictor()}, crops, plan)
        for name in ("dice", "iou", "mean_iou", "pixel_accuracy", "accuracy"):
            assert report.aggregate[name] == 1.0
        np.testing.assert_array_equal(report.confusion.counts, np.diag([4, 4, 4]))
        assert report.evaluated == 12

    def test_wrong_everything(self, make_crops):
        crops = make_crops(6)
        plan = stratified_kfold(crops, 2, 0)
        report = SegmentationMetrics().calculate_all_metrics({0: OffByOnePredictor()}, crops, plan)
        assert report.aggregate["dice"] == 0.0 and report.aggregate["accuracy"] == 0.0
        assert np.trace(report.confusion.counts) == 0

    def test_deterministic_json_omits_wall_clock(self):
        report = MetricsReport(folds=[], aggregate={"dice": 1.0}, wall_clock_seconds=3.5)
        assert "wall_clock_seconds" not in json.loads(report.to_json())
        assert json.loads(report.to_json(deterministic=False))["wall_clock_seconds"] == 3.5

    def test_merge(self):
        def single(fold, dice, counts):
            return MetricsReport(
                folds=[{"fold": fold, "samples": 2, "dice": dice, "iou": dice, "mean_iou": dice,
                        "pixel_accuracy": dice, "accuracy": 0.5}],
                confusion=ConfusionMatrix(np.array(counts)),
                wall_clock_seconds=1.0,
            )

        merged = merge_reports([single(1, 0.4, np.eye(3, dtype=int)), single(0, 0.8, 2 * np.eye(3, dtype=int))])
        assert [f["fold"] for f in merged.folds] == [0, 1]
        assert merged.aggregate["dice"] == pytest.approx(0.6)
        np.testing.assert_array_equal(merged.confusion.counts, 3 * np.eye(3, dtype=int))
        assert merged.wall_clock_seconds == 2.0

    def test_cmd_evaluate(self, tiny_run_config, tmp_path, make_crops):
        crops = make_crops(12)
        plan = stratified_kfold(crops, 2, 0)
        ckpt = cmd_train_main(replace(tiny_run_config, epochs=1), crops, plan, str(tmp_path / "main_fold0.ckpt"))
        report = cmd_evaluate([str(tmp_path / "main_fold0.ckpt")], crops, plan)
        assert [f["fold"] for f in report.folds] == [0]
        assert report.evaluated == len(plan.members(0))
        assert 0.0 <= report.aggregate["dice"] <= 1.0
        assert report.confusion.total == report.evaluated
        assert report.fingerprint == ckpt.fingerprint

        saved = report.save(str(tmp_path / "eval" / "report.json"))
        assert json.load(open(saved))["evaluated_samples"] == report.evaluated
        assert os.path.exists(report.export_xlsx(str(tmp_path / "eval" / "report.xlsx")))

    def test_cmd_evaluate_rejects_duplicate_folds(self, tiny_run_config, tmp_path, make_crops):
        crops = make_crops(6)
        plan = stratified_kfold(crops, 2, 0)
        path = str(tmp_path / "main.ckpt")
        checkpoint_save(cmd_train_main(replace(tiny_run_config, epochs=1), crops, plan), path)
        with pytest.raises(DataError):
            cmd_evaluate([path, path], crops, plan)

    def test_export_overlays(self, tiny_run_config, tmp_path, make_crops):
        crops = make_crops(6)
        plan = stratified_kfold(crops, 2, 0)
        path = str(tmp_path / "main.ckpt")
        checkpoint_save(cmd_train_main(replace(tiny_run_config, epochs=1), crops, plan), path)
        paths = export_overlays([path], crops, plan, str(tmp_path / "overlays"))
        held_out = sorted(plan.members(0))
        assert paths == [str(tmp_path / "overlays" / "fold0" / f"{sid}.png") for sid in held_out]
        with Image.open(paths[0]) as overlay:
            assert overlay.mode == "RGB" and overlay.size == crops[0].shape[::-1]


# ============================================================================
# Ablation ladder
# ============================================================================

class TestAblation:
    def test_tiny_ladder(self, tiny_run_config, tmp_path):
        cfg = replace(tiny_run_config, epochs=1, crop_mode="clamp")
        report = cmd_ablate(cfg, synth_generate(12, seed=0, size=32), whole_image_columns=True)

        tables = report["tables"]
        assert [len(tables[t]) for t in ("preprocessing", "architecture", "multitask")] == [3, 3, 3]
        assert [r["variant"] for r in tables["multitask"]] == ["full cascade", "multitask", "multitask + aggregation"]
        assert tables["multitask"][0]["accuracy"] is None
        assert tables["multitask"][2]["accuracy"] is not None
        assert all("dice_whole" in row for row in tables["architecture"])
        for table in tables.values():
            for row in table:
                assert 0.0 <= row["dice"] <= 1.0 and 0.0 <= row["mean_iou"] <= 1.0
        assert report["folds"] == [0] and sum(report["fold_sizes"]) == 12
        assert sum(map(sum, report["confusion"]["counts"])) == report["fold_sizes"][0]
        assert "2996/3064" in report["reference"]["consistency"]

        text = render_report(report)
        assert "== preprocessing (%) ==" in text and "== confusion" in text
        paths = save_ablation(report, str(tmp_path / "ablation"), xlsx=True)
        assert all(os.path.exists(p) for p in paths.values())

    def test_golden_comparison(self, tmp_path):
        report = {"tables": {"preprocessing": [{"variant": "a", "dice": 0.5, "mean_iou": 0.6}]}}
        golden = str(tmp_path / "golden" / "ablation.json")
        assert compare_golden(report, golden) is False
        assert open(golden).read() == ablation_json(report)
        assert compare_golden(report, golden) is True
        report["tables"]["preprocessing"][0]["dice"] = 0.5000001
        with pytest.raises(NumericError):
            compare_golden(report, golden)
