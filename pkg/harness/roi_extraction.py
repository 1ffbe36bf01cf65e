"""
Tumor-region detection stage: preliminary map -> threshold -> largest component ->
convex hull -> center of gravity -> fixed window crop of image, map and mask
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from datapipe.sample import Sample
from harness.checkpoint import Checkpoint
from harness.trainer import network_from_checkpoint
from imgops.morphology import (
    BoundingBox,
    Dropped,
    binarize,
    center_box,
    cog_pixel,
    convex_hull_fill,
    crop_window,
    largest_component,
)
from nets.region_net import RegionNet, forward_region
from utils.errors import ConfigError
from utils.logger import log_alert, log_pipeline_step

BOX_COLUMNS = ("row_lo", "row_hi", "col_lo", "col_hi")


@dataclass(frozen=True)
class RoiOutcome:
    sample_id: str
    status: str  # cropped | fallback | dropped
    center: Optional[Tuple[int, int]]
    box: Optional[BoundingBox]
    reason: str = ""

    def to_dict(self) -> dict:
        row = {"id": self.sample_id, "status": self.status, "reason": self.reason,
               "center_row": None, "center_col": None}
        row.update(dict.fromkeys(BOX_COLUMNS))
        if self.center is not None:
            row["center_row"], row["center_col"] = self.center
        if self.box is not None:
            row.update(self.box.to_dict())
        return row


def locate_roi(
    prob_map: np.ndarray,
    half_window: int,
    threshold: float = 0.5,
    mode: str = "drop",
    empty_fallback: str = "center",
) -> Tuple[Optional[BoundingBox], str, Optional[Tuple[int, int]], str]:
    """
    Returns (box or None, status, center, reason) for one preliminary probability map
    """
    region, is_empty = largest_component(binarize(prob_map, threshold))
    if is_empty:
        if empty_fallback == "center":
            box = center_box(prob_map.shape, half_window)
            if box is None:
                return None, "dropped", None, "empty prediction and image smaller than window"
            center = (box.row_lo + half_window, box.col_lo + half_window)
            return box, "fallback", center, "empty prediction"
        return None, "dropped", None, "empty prediction"

    center = cog_pixel(convex_hull_fill(region))
    crop = crop_window(prob_map, prob_map, center, half_window, mode)
    if isinstance(crop, Dropped):
        return None, "dropped", center, crop.reason
    return crop.box, "cropped", center, ""


def extract_roi_samples(
    net: RegionNet,
    samples: Sequence[Sample],
    half_window: int,
    threshold: float = 0.5,
    mode: str = "drop",
    empty_fallback: str = "center",
) -> Tuple[List[Sample], List[RoiOutcome]]:
    cropped, outcomes = [], []
    for sample in samples:
        prob_map = forward_region(net, sample.image).values[0].astype(np.float64)
        box, status, center, reason = locate_roi(prob_map, half_window, threshold, mode, empty_fallback)
        outcomes.append(RoiOutcome(sample.id, status, center, box, reason))
        if box is None:
            log_alert("ROI dropped", f"{sample.id}: {reason}", "WARNING")
            continue
        if status == "fallback":
            log_alert("Empty prediction", f"{sample.id}: using the image-center window", "WARNING")
        cropped.append(
            Sample(
                id=sample.id,
                image=box.crop(sample.image),
                mask=box.crop(sample.mask),
                label=sample.label,
                patient_id=sample.patient_id,
                fold=sample.fold,
                prelim_map=box.crop(prob_map),
            )
        )
    return cropped, outcomes


def cmd_extract_roi(ckpt: Checkpoint, samples: Sequence[Sample]) -> Tuple[List[Sample], pd.DataFrame]:
    """
    Crop every sample around its detected tumor; dropped samples are excluded.
    Returns the cropped samples and a per-sample outcome table.
    """
    logger = log_pipeline_step("ROI extraction", "STARTED", f"{len(samples)} samples")
    if ckpt.stage != "region":
        raise ConfigError(f"ROI extraction needs a region checkpoint, got {ckpt.stage!r}")
    cfg = ckpt.run_config
    size = cfg.region.input_size
    wrong = [s.id for s in samples if s.shape != (size, size)]
    if wrong:
        raise ConfigError(f"checkpoint expects {size}×{size} images; {len(wrong)} samples differ, e.g. {wrong[:3]}")

    net = network_from_checkpoint(ckpt)
    cropped, outcomes = extract_roi_samples(
        net, samples, cfg.half_window, cfg.threshold, cfg.crop_mode, cfg.empty_fallback
    )
    table = pd.DataFrame([o.to_dict() for o in outcomes])
    counts = table["status"].value_counts().to_dict() if len(table) else {}
    logger.info(f"ROI extraction: {len(cropped)} kept, outcome counts {counts}")
    return cropped, table
