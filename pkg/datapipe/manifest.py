"""
Native dataset layout: a CSV manifest next to 8-bit PNG images and {0,255} PNG masks.
Paths inside the manifest are relative to the manifest's directory.
"""

import os
from typing import List, Sequence

import pandas as pd

from datapipe.sample import Sample
from imgops.image_io import read_image, read_mask, write_image, write_mask
from utils.errors import DataError, PipelineError
from utils.logger import log_data_quality_check, log_pipeline_step

MANIFEST_COLUMNS = ["id", "image_path", "mask_path", "label", "patient_id"]
MAP_COLUMN = "map_path"


def load_manifest(path: str) -> List[Sample]:
    logger = log_pipeline_step("Load manifest", "STARTED", path)
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")

    df = pd.read_csv(path, dtype={"id": str, "patient_id": str, "image_path": str, "mask_path": str})
    missing_columns = [col for col in MANIFEST_COLUMNS if col not in df.columns]
    if missing_columns:
        log_data_quality_check("Manifest Required Columns", "FAIL", f"Missing columns: {missing_columns}")
        raise DataError(f"manifest {path} lacks columns {missing_columns}")
    log_data_quality_check("Manifest Required Columns", "PASS")

    duplicated = df["id"][df["id"].duplicated()].tolist()
    if duplicated:
        raise DataError(f"manifest {path} repeats sample ids {duplicated[:5]}")

    base_dir = os.path.dirname(os.path.abspath(path))
    has_maps = MAP_COLUMN in df.columns
    samples = []
    for row in df.itertuples(index=False):
        sample_id = str(row.id)
        try:
            prelim_map = None
            if has_maps and isinstance(getattr(row, MAP_COLUMN), str):
                prelim_map = read_image(os.path.join(base_dir, getattr(row, MAP_COLUMN)))
            samples.append(
                Sample(
                    id=sample_id,
                    image=read_image(os.path.join(base_dir, row.image_path)),
                    mask=read_mask(os.path.join(base_dir, row.mask_path)),
                    label=int(row.label),
                    patient_id=str(row.patient_id),
                    prelim_map=prelim_map,
                )
            )
        except (PipelineError, ValueError) as e:
            log_data_quality_check("Manifest Row", "FAIL", f"row {sample_id}: {e}")
            raise DataError(f"manifest row {sample_id}: {e}") from e

    logger.info(f"Loaded {len(samples)} samples from {path}")
    return samples


def save_manifest(samples: Sequence[Sample], path: str) -> str:
    """
    Write images/, masks/ (and maps/ for cropped samples) plus the CSV; returns the path
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(base_dir, exist_ok=True)
    with_maps = any(s.prelim_map is not None for s in samples)

    rows = []
    for sample in samples:
        row = {
            "id": sample.id,
            "image_path": os.path.join("images", f"{sample.id}.png"),
            "mask_path": os.path.join("masks", f"{sample.id}.png"),
            "label": sample.label,
            "patient_id": sample.patient_id,
        }
        write_image(os.path.join(base_dir, row["image_path"]), sample.image)
        write_mask(os.path.join(base_dir, row["mask_path"]), sample.mask)
        if with_maps:
            row[MAP_COLUMN] = None
            if sample.prelim_map is not None:
                row[MAP_COLUMN] = os.path.join("maps", f"{sample.id}.png")
                write_image(os.path.join(base_dir, row[MAP_COLUMN]), sample.prelim_map)
        rows.append(row)

    columns = MANIFEST_COLUMNS + ([MAP_COLUMN] if with_maps else [])
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return path
