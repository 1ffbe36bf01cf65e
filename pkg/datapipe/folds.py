import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold

from config import NUM_FOLDS
from datapipe.sample import Sample
from utils.errors import DataError
from utils.logger import log_data_quality_check, log_pipeline_step


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignment: Dict[str, int] = field(default_factory=dict)
    patient_disjoint: bool = False

    def fold_of(self, sample_id: str) -> int:
        return self.assignment[sample_id]

    def members(self, fold: int) -> List[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def sizes(self) -> List[int]:
        counts = np.bincount(list(self.assignment.values()), minlength=self.k)
        return [int(c) for c in counts]

    def split(self, samples: Sequence[Sample], fold: int):
        """(train, test) for the given held-out fold, in input order"""
        if not 0 <= fold < self.k:
            raise DataError(f"fold {fold} outside [0, {self.k})")
        unknown = [s.id for s in samples if s.id not in self.assignment]
        if unknown:
            raise DataError(f"samples missing from the fold plan: {unknown[:5]}")
        train = [s for s in samples if self.assignment[s.id] != fold]
        test = [s for s in samples if self.assignment[s.id] == fold]
        if not train or not test:
            raise DataError(f"fold {fold} leaves an empty training or test set")
        return train, test

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "patient_disjoint": self.patient_disjoint,
            "assignment": dict(sorted(self.assignment.items())),
        }

    def save(self, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path: str) -> "FoldPlan":
        if not os.path.exists(path):
            raise DataError(f"fold plan not found: {path}")
        with open(path) as f:
            data = json.load(f)
        return cls(
            k=int(data["k"]),
            seed=int(data["seed"]),
            assignment={str(k): int(v) for k, v in data["assignment"].items()},
            patient_disjoint=bool(data.get("patient_disjoint", False)),
        )


def _by_class(samples: Sequence[Sample]) -> Dict[int, List[Sample]]:
    groups: Dict[int, List[Sample]] = defaultdict(list)
    for sample in samples:
        groups[sample.label].append(sample)
    return groups


def _fold_assignment(samples: Sequence[Sample], k: int, seed: int, patient_disjoint: bool) -> Dict[str, int]:
    labels = np.array([s.label for s in samples])
    placeholder = np.zeros((len(samples), 1))
    try:
        if patient_disjoint:
            splitter = StratifiedGroupKFold(n_splits=k, shuffle=True, random_state=seed)
            splits = splitter.split(placeholder, labels, groups=[s.patient_id for s in samples])
        else:
            splits = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder, labels)
        return {samples[i].id: fold for fold, (_, held_out) in enumerate(splits) for i in held_out}
    except ValueError as e:
        raise DataError(f"cannot split {len(samples)} samples into {k} folds: {e}") from e


def stratified_kfold(
    samples: Sequence[Sample],
    k: int = NUM_FOLDS,
    seed: int = 0,
    patient_disjoint: bool = False,
) -> FoldPlan:
    """
    Shuffled stratified k-fold assignment: every fold holds each class within one
    sample of its share, and overall fold sizes differ by at most one.

    With ``patient_disjoint`` all slices of a patient share a fold; class balance is then
    only approximate.
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    logger = log_pipeline_step("Fold planning", "STARTED", f"k={k} seed={seed} patient_disjoint={patient_disjoint}")
    for label, members in sorted(_by_class(samples).items()):
        if len(members) < k:
            log_data_quality_check("Fold Class Size", "FAIL", f"class {label}: {len(members)} < {k}")
            raise DataError(f"class {label} has {len(members)} samples, fewer than k={k}")

    assignment = _fold_assignment(samples, k, seed, patient_disjoint)
    plan = FoldPlan(k=k, seed=seed, assignment=assignment, patient_disjoint=patient_disjoint)

    sizes = plan.sizes()
    if min(sizes) == 0:
        raise DataError(f"fold plan has an empty fold: sizes={sizes}")
    result = "PASS" if max(sizes) - min(sizes) <= 1 else "WARNING"
    log_data_quality_check("Fold Sizes", result, f"sizes={sizes}")
    logger.info(f"Fold sizes: {sizes}")
    return plan
