import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from config import CLAHE_BINS, CLAHE_CLIP_LIMIT, CLAHE_TILES, MEDIAN_KERNEL
from datapipe.sample import Sample
from imgops.enhancement import CLAHE_DEPTHS, enhance
from utils.errors import ConfigError
from utils.logger import log_pipeline_step


@dataclass(frozen=True)
class EnhancementParams:
    median_k: int = MEDIAN_KERNEL
    tiles: Tuple[int, int] = CLAHE_TILES
    clip_limit: float = CLAHE_CLIP_LIMIT
    bins: int = CLAHE_BINS

    def validate(self) -> "EnhancementParams":
        if self.median_k < 1 or self.median_k % 2 == 0:
            raise ConfigError(f"median_k must be a positive odd integer, got {self.median_k}")
        if len(self.tiles) != 2 or min(self.tiles) < 1:
            raise ConfigError(f"clahe_tiles must be two positive integers, got {self.tiles}")
        if math.isnan(self.clip_limit) or self.clip_limit < 1:
            raise ConfigError(f"clip_limit must be >= 1 or inf, got {self.clip_limit}")
        if self.bins not in CLAHE_DEPTHS:
            raise ConfigError(f"clahe_bins must be one of {sorted(CLAHE_DEPTHS)}, got {self.bins}")
        return self


def preprocess_sample(s: Sample, params: EnhancementParams = EnhancementParams()) -> Sample:
    """Median filter then CLAHE on the image; the mask is left untouched"""
    enhanced = enhance(s.image, median_k=params.median_k, tiles=params.tiles,
                       clip_limit=params.clip_limit, bins=params.bins)
    return s.with_image(enhanced)


def preprocess_samples(samples: Sequence[Sample], params: EnhancementParams = EnhancementParams()) -> List[Sample]:
    logger = log_pipeline_step("Enhancement", "STARTED", f"{len(samples)} samples")
    enhanced = [preprocess_sample(s, params) for s in samples]
    logger.info(f"Enhanced {len(enhanced)} samples (median {params.median_k}, CLAHE {params.tiles} clip {params.clip_limit})")
    return enhanced
