from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from config import NUM_CLASSES
from imgops.image_io import as_image, as_mask
from utils.errors import DataError, ShapeError


@dataclass
class Sample:
    """
    One MRI slice with its exact tumor mask and tumor type.

    ``prelim_map`` is only set on ROI-cropped samples (the region net's probability
    map over the same window).
    """
    id: str
    image: np.ndarray
    mask: np.ndarray
    label: int
    patient_id: str
    fold: Optional[int] = None
    prelim_map: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        try:
            self.image = as_image(self.image)
            self.mask = as_mask(self.mask)
        except (ShapeError, ValueError) as e:
            raise DataError(f"sample {self.id}: {e}") from e
        if self.image.shape != self.mask.shape:
            raise DataError(f"sample {self.id}: image {self.image.shape} and mask {self.mask.shape} extents differ")
        if not 0 <= int(self.label) < NUM_CLASSES:
            raise DataError(f"sample {self.id}: label {self.label} outside [0, {NUM_CLASSES})")
        self.label = int(self.label)
        self.patient_id = str(self.patient_id)
        if self.prelim_map is not None:
            self.prelim_map = np.asarray(self.prelim_map, dtype=np.float64)
            if self.prelim_map.shape != self.image.shape:
                raise DataError(f"sample {self.id}: preliminary map {self.prelim_map.shape} extents differ")

    @property
    def shape(self):
        return self.image.shape

    def with_image(self, image: np.ndarray) -> "Sample":
        return replace(self, image=image)
