import glob
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import h5py
import numpy as np
from scipy import io as sio

from config import DATA_DIR, EXTERNAL_EXPECTED_SIZE, EXTERNAL_KEY_MAP, EXTERNAL_LABEL_MAP, KAGGLE_DATASET_NAME
from datapipe.manifest import save_manifest
from datapipe.sample import Sample
from utils.errors import ConfigError, DataError
from utils.logger import log_data_quality_check, log_pipeline_step

RECORD_PATTERNS = ("*.mat", "*.npz")
REQUIRED_KEYS = ("image", "mask", "label", "patient_id")


@dataclass
class ImportResult:
    manifest_path: str
    samples: List[Sample] = field(default_factory=list)
    skipped: Dict[str, str] = field(default_factory=dict)


class ExternalDatasetConnector:
    """
    Converts a directory of per-slice records (MATLAB .mat v5/v7.3 or .npz) into the
    native manifest + PNG layout.

    Record field names come from ``key_map`` (slash-separated struct paths); source
    labels are translated through ``label_map``.
    """

    def __init__(self, key_map: Optional[Dict[str, str]] = None, label_map: Optional[Dict[int, int]] = None):
        self.logger = log_pipeline_step("ExternalDatasetConnector", "STARTED")
        self.data_dir = DATA_DIR
        self.key_map = dict(EXTERNAL_KEY_MAP if key_map is None else key_map)
        self.label_map = {int(k): int(v) for k, v in (EXTERNAL_LABEL_MAP if label_map is None else label_map).items()}
        missing = [key for key in REQUIRED_KEYS if key not in self.key_map]
        if missing:
            raise ConfigError(f"key map lacks entries for {missing}")

    def download_dataset(self, dataset: str = KAGGLE_DATASET_NAME) -> bool:
        """
        Download the MRI dataset from Kaggle (optional; needs API credentials)
        """
        if not dataset:
            self.logger.error("No Kaggle dataset configured (set BTM_KAGGLE_DATASET)")
            return False
        try:
            self.logger.info(f"Downloading {dataset} from Kaggle...")
            os.makedirs(self.data_dir, exist_ok=True)

            # kaggle authenticates on import
            import kaggle

            kaggle.api.dataset_download_files(dataset, path=self.data_dir, unzip=True)
            self.logger.info("Dataset downloaded successfully")
            return True

        except Exception as e:
            self.logger.error(f"Error downloading dataset: {str(e)}")
            return False

    def _resolve(self, container: Any, path: str) -> Any:
        node = container
        for part in path.split("/"):
            if isinstance(node, (dict, h5py.Group)):
                node = node[part]
            else:
                node = getattr(node, part)
        return node

    def _read_npz(self, path: str) -> Dict[str, Any]:
        with np.load(path, allow_pickle=False) as record:
            fields = {}
            for key, source in self.key_map.items():
                leaf = source.split("/")[-1]
                name = source if source in record.files else leaf
                fields[key] = record[name]
            return fields

    def _read_mat(self, path: str) -> Dict[str, Any]:
        try:
            record = sio.loadmat(path, squeeze_me=True, struct_as_record=False)
            return {key: self._resolve(record, source) for key, source in self.key_map.items()}
        except NotImplementedError:
            # MATLAB v7.3 files are HDF5 containers, stored column-major
            with h5py.File(path, "r") as record:
                fields = {}
                for key, source in self.key_map.items():
                    value = np.asarray(self._resolve(record, source)[()])
                    if key == "patient_id" and value.dtype.kind in "ui":
                        value = "".join(chr(int(c)) for c in value.ravel())
                    elif value.ndim == 2:
                        value = value.T
                    fields[key] = value
                return fields

    def read_record(self, path: str) -> Dict[str, Any]:
        if path.endswith(".npz"):
            return self._read_npz(path)
        return self._read_mat(path)

    def _to_sample(self, sample_id: str, fields: Dict[str, Any]) -> Sample:
        raw = np.asarray(fields["image"], dtype=np.float64)
        if raw.ndim != 2:
            raise DataError(f"image is not 2-D: {raw.shape}")
        low, high = float(raw.min()), float(raw.max())
        image = (raw - low) / (high - low) if high > low else np.zeros_like(raw)
        mask = np.asarray(fields["mask"]) != 0

        source_label = int(np.asarray(fields["label"]).ravel()[0])
        if source_label not in self.label_map:
            raise DataError(f"unknown label {source_label}")
        patient = fields["patient_id"]
        if isinstance(patient, np.ndarray):
            patient = patient.item() if patient.size == 1 else "".join(str(c) for c in patient.ravel())
        return Sample(
            id=sample_id,
            image=image,
            mask=mask,
            label=self.label_map[source_label],
            patient_id=str(patient).strip(),
        )

    def import_directory(self, source_dir: str, out_dir: str) -> ImportResult:
        """
        Convert every record under ``source_dir``; unreadable records are skipped, logged
        and counted
        """
        self.logger.info(f"Importing records from {source_dir}...")
        paths = sorted(p for pattern in RECORD_PATTERNS for p in glob.glob(os.path.join(source_dir, pattern)))
        if not paths:
            raise DataError(f"no .mat or .npz records under {source_dir}")

        result = ImportResult(manifest_path=os.path.join(out_dir, "manifest.csv"))
        for path in paths:
            sample_id = os.path.splitext(os.path.basename(path))[0]
            try:
                sample = self._to_sample(sample_id, self.read_record(path))
            except Exception as e:
                self.logger.warning(f"Skipping record {path}: {str(e)}")
                result.skipped[sample_id] = str(e)
                continue
            if sample.shape != (EXTERNAL_EXPECTED_SIZE, EXTERNAL_EXPECTED_SIZE):
                log_data_quality_check(
                    "Record Extents", "WARNING", f"{sample_id}: {sample.shape} instead of {EXTERNAL_EXPECTED_SIZE}²"
                )
            result.samples.append(sample)

        if result.skipped:
            log_data_quality_check("Imported Records", "WARNING", f"{len(result.skipped)} of {len(paths)} skipped")
        else:
            log_data_quality_check("Imported Records", "PASS", f"{len(paths)} records")
        save_manifest(result.samples, result.manifest_path)
        self.logger.info(f"Imported {len(result.samples)} samples into {result.manifest_path}")
        return result


def import_external_dataset(
    source_dir: str,
    out_dir: str,
    key_map: Optional[Dict[str, str]] = None,
    label_map: Optional[Dict[int, int]] = None,
) -> ImportResult:
    return ExternalDatasetConnector(key_map, label_map).import_directory(source_dir, out_dir)
