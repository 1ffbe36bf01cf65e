#!/usr/bin/env python3
"""
Brain Tumor Segmentation and Classification
Command-line entry point for every pipeline stage
"""

import argparse
import os
import sys

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import KAGGLE_DATASET_NAME, SYNTH_SAMPLES
from datapipe.external_dataset import ExternalDatasetConnector
from datapipe.folds import FoldPlan, stratified_kfold
from datapipe.manifest import load_manifest, save_manifest
from datapipe.phantoms import synth_generate
from datapipe.preprocessing import preprocess_samples
from harness.ablation import cmd_ablate, compare_golden, render_report, save_ablation
from harness.checkpoint import checkpoint_load
from harness.gradcheck_suite import run_gradcheck
from harness.pipeline import BrainTumorPipeline
from harness.reports import cmd_evaluate, export_overlays
from harness.roi_extraction import cmd_extract_roi
from harness.run_config import RunConfig, load_run_config
from harness.trainer import cmd_train_main, cmd_train_region
from utils.errors import EXIT_OK, ConfigError, PipelineError
from utils.logger import log_pipeline_step, set_log_level, setup_logger


class PipelineArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they exit with the configuration code"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value run configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--fold", type=int, help="held-out fold")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="omit wall-clock values from written reports")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default="INFO",
                        help="Logging level")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", help="manifest CSV (overrides the configured one)")
    data.add_argument("--fold-plan", help="fold plan JSON; created from the manifest when absent")

    parser = PipelineArgumentParser(description="Brain tumor segmentation and classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="generate synthetic phantoms")
    p.add_argument("--n", type=int, default=SYNTH_SAMPLES)
    p.add_argument("--size", type=int, help="phantom extent (defaults to the region net input size)")

    p = sub.add_parser("import", parents=[common], help="convert .mat/.npz records into a manifest")
    p.add_argument("source", help="directory of records")
    p.add_argument("--download", action="store_true", help="fetch the configured Kaggle dataset first")
    p.add_argument("--dataset", default=KAGGLE_DATASET_NAME)

    sub.add_parser("preprocess", parents=[common, data], help="median filter + CLAHE")

    p = sub.add_parser("train-region", parents=[common, data], help="train the tumor-region detector")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("extract-roi", parents=[common, data], help="crop samples around the detected tumor")
    p.add_argument("--checkpoint", required=True, help="region checkpoint")

    p = sub.add_parser("train-main", parents=[common, data], help="train the multiscale cascaded network")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("evaluate", parents=[common, data], help="held-out metrics for trained checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True, help="one checkpoint per held-out fold")
    p.add_argument("--xlsx", action="store_true")
    p.add_argument("--export-overlays", action="store_true", help="write mask-over-slice PNGs under <out>/overlays")

    p = sub.add_parser("ablate", parents=[common, data], help="run the variant ladder")
    p.add_argument("--n", type=int, default=SYNTH_SAMPLES, help="phantoms to generate without --manifest")
    p.add_argument("--folds", type=int, nargs="+", help="folds to run (default: --fold)")
    p.add_argument("--whole-image", action="store_true", help="also train the architecture variants uncropped")
    p.add_argument("--golden", help="golden report to compare against (established when missing)")
    p.add_argument("--xlsx", action="store_true")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--points", type=int, help="random points per check")

    p = sub.add_parser("pipeline", parents=[common, data], help="every stage in one process")
    p.add_argument("--n", type=int, default=SYNTH_SAMPLES, help="phantoms to generate without --manifest")
    p.add_argument("--folds", type=int, nargs="+", help="folds to run (default: --fold)")
    p.add_argument("--xlsx", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    base = RunConfig.desk()
    cfg = load_run_config(args.config, base) if args.config else base
    return cfg.with_overrides(
        seed=args.seed,
        fold=args.fold,
        out_dir=args.out,
        manifest=getattr(args, "manifest", None),
        fold_plan=getattr(args, "fold_plan", None),
    )


def _samples(cfg: RunConfig):
    if not cfg.manifest:
        raise ConfigError("no manifest given (--manifest or the manifest config key)")
    return load_manifest(cfg.manifest)


def _fold_plan(cfg: RunConfig, samples) -> FoldPlan:
    if cfg.fold_plan and os.path.exists(cfg.fold_plan):
        return FoldPlan.load(cfg.fold_plan)
    plan = stratified_kfold(samples, cfg.num_folds, cfg.seed, cfg.patient_disjoint)
    plan.save(cfg.fold_plan or os.path.join(cfg.out_dir, "fold_plan.json"))
    return plan


def _resume(args, cfg: RunConfig):
    return checkpoint_load(args.resume, cfg.fingerprint()) if args.resume else None


def run_command(args) -> None:
    cfg = resolve_config(args)
    out = cfg.out_dir
    command = args.command

    if command == "synth-gen":
        samples = synth_generate(args.n, cfg.seed, size=args.size or cfg.region.input_size)
        print(f"Wrote {save_manifest(samples, os.path.join(out, 'manifest.csv'))}")

    elif command == "import":
        connector = ExternalDatasetConnector()
        connector.data_dir = args.source
        if args.download and not connector.download_dataset(args.dataset):
            raise ConfigError(f"could not download dataset {args.dataset!r}")
        result = connector.import_directory(args.source, out)
        print(f"Imported {len(result.samples)} samples ({len(result.skipped)} skipped) into {result.manifest_path}")

    elif command == "preprocess":
        samples = preprocess_samples(_samples(cfg), cfg.enhancement)
        print(f"Wrote {save_manifest(samples, os.path.join(out, 'manifest.csv'))}")

    elif command == "train-region":
        samples = _samples(cfg)
        path = os.path.join(out, f"region_fold{cfg.fold}.ckpt")
        ckpt = cmd_train_region(cfg, samples, _fold_plan(cfg, samples), path, _resume(args, cfg))
        print(f"Region net trained to epoch {ckpt.epoch}: {path}")

    elif command == "extract-roi":
        crops, outcomes = cmd_extract_roi(checkpoint_load(args.checkpoint), _samples(cfg))
        save_manifest(crops, os.path.join(out, "manifest.csv"))
        outcomes.to_csv(os.path.join(out, "roi_outcomes.csv"), index=False)
        print(f"Kept {len(crops)} of {len(outcomes)} samples; cropped manifest in {out}")

    elif command == "train-main":
        samples = _samples(cfg)
        path = os.path.join(out, f"main_fold{cfg.fold}.ckpt")
        ckpt = cmd_train_main(cfg, samples, _fold_plan(cfg, samples), path, _resume(args, cfg))
        print(f"Main net trained to epoch {ckpt.epoch}: {path}")

    elif command == "evaluate":
        samples = _samples(cfg)
        plan = _fold_plan(cfg, samples)
        report = cmd_evaluate(args.checkpoint, samples, plan)
        print(f"Wrote {report.save(os.path.join(out, 'report.json'), args.deterministic)}")
        if args.xlsx:
            report.export_xlsx(os.path.join(out, "report.xlsx"))
        if args.export_overlays:
            paths = export_overlays(args.checkpoint, samples, plan, os.path.join(out, "overlays"))
            print(f"Wrote {len(paths)} overlays under {os.path.join(out, 'overlays')}")
        print(report.fold_table().to_string(index=False))

    elif command == "ablate":
        samples = load_manifest(cfg.manifest) if cfg.manifest else synth_generate(args.n, cfg.seed, cfg.region.input_size)
        report = cmd_ablate(cfg, samples, args.folds, args.whole_image)
        save_ablation(report, out, args.xlsx)
        print(render_report(report))
        if args.golden:
            matched = compare_golden(report, args.golden)
            print("Golden report matched" if matched else f"Golden report established at {args.golden}")

    elif command == "gradcheck":
        errors = run_gradcheck(cfg.seed, args.points) if args.points else run_gradcheck(cfg.seed)
        for name, error in errors.items():
            print(f"{name:<24} {error:.3e}")

    elif command == "pipeline":
        pipeline = BrainTumorPipeline(cfg, args.deterministic)
        report = pipeline.run_full_pipeline(args.folds, args.n)
        if args.xlsx:
            pipeline.export_xlsx(report)
        print(report.fold_table().to_string(index=False))


def main(argv=None) -> int:
    """
    Main function to run one pipeline stage
    """
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"❌ usage error: {e}")
        return e.exit_code
    set_log_level(args.log_level)
    logger = setup_logger("brain_tumor_pipeline")

    try:
        run_command(args)
    except PipelineError as e:
        log_pipeline_step(args.command, "ERROR", str(e))
        print(f"❌ {args.command} failed: {e}")
        return e.exit_code

    logger.info(f"{args.command} finished")
    print(f"✅ {args.command} completed successfully")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
