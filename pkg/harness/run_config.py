"""
Run-time configuration: stage parameters plus the network, loss and enhancement
settings, loaded from a flat key=value file.

Documented keys (anything else is rejected):

  run          epochs lr momentum batch_size seed fold num_folds patient_disjoint enhance
               half_window crop_mode empty_fallback threshold
  network      input_size base_channels multiscale cascade_level multitask aggregation
               fc_hidden num_classes scaled_map_injection dtype
  region net   region_input_size region_channels
  loss         alpha_seg alpha_cls omega0 sigma strict_printed_weight
  enhancement  median_k clahe_tiles clip_limit clahe_bins
  paths        manifest fold_plan out_dir
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict

from dotenv import dotenv_values

from config import (
    BATCH_SIZE,
    BINARIZE_THRESHOLD,
    CROP_MODE,
    DEFAULT_SEED,
    DESK_EPOCHS,
    DESK_HALF_WINDOW,
    EMPTY_PREDICTION_FALLBACK,
    FULL_SCALE_EPOCHS,
    LEARNING_RATE,
    MOMENTUM,
    NUM_FOLDS,
    OUTPUT_DIR,
    SYNTH_SIZE,
)
from datapipe.preprocessing import EnhancementParams
from lossmetrics.losses import LossWeights
from nets.network_config import NetworkConfig, desk_main_config, desk_region_config, scaled_fc_hidden
from utils.errors import ConfigError

RUN_KEYS = (
    "epochs", "lr", "momentum", "batch_size", "seed", "fold", "num_folds", "patient_disjoint",
    "enhance", "half_window", "crop_mode", "empty_fallback", "threshold",
)
NETWORK_KEYS = (
    "input_size", "base_channels", "multiscale", "cascade_level", "multitask", "aggregation",
    "fc_hidden", "num_classes", "scaled_map_injection", "dtype",
)
REGION_KEYS = {"region_input_size": "input_size", "region_channels": "base_channels"}
LOSS_KEYS = ("alpha_seg", "alpha_cls", "omega0", "sigma", "strict_printed_weight")
ENHANCEMENT_KEYS = {"median_k": "median_k", "clahe_tiles": "tiles", "clip_limit": "clip_limit", "clahe_bins": "bins"}
PATH_KEYS = ("manifest", "fold_plan", "out_dir")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(key: str, raw: str) -> bool:
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_ints(key: str, raw: str):
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}")


def _parse_scalar(key: str, raw: str, default: Any) -> Any:
    if isinstance(default, bool):
        return _parse_bool(key, raw)
    if isinstance(default, tuple):
        return _parse_ints(key, raw)
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return math.inf if raw.strip().lower() in ("inf", "infinity") else float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}")
    return raw.strip()


@dataclass(frozen=True)
class RunConfig:
    epochs: int = FULL_SCALE_EPOCHS
    lr: float = LEARNING_RATE
    momentum: float = MOMENTUM
    batch_size: int = BATCH_SIZE
    seed: int = DEFAULT_SEED
    fold: int = 0
    num_folds: int = NUM_FOLDS
    patient_disjoint: bool = False
    enhance: bool = True
    half_window: int = DESK_HALF_WINDOW
    crop_mode: str = CROP_MODE
    empty_fallback: str = EMPTY_PREDICTION_FALLBACK
    threshold: float = BINARIZE_THRESHOLD
    region: NetworkConfig = field(default_factory=lambda: desk_region_config(SYNTH_SIZE))
    network: NetworkConfig = field(default_factory=lambda: desk_main_config(2 * DESK_HALF_WINDOW))
    loss: LossWeights = field(default_factory=LossWeights)
    enhancement: EnhancementParams = field(default_factory=EnhancementParams)
    manifest: str = ""
    fold_plan: str = ""
    out_dir: str = OUTPUT_DIR

    @classmethod
    def desk(cls, **overrides: Any) -> "RunConfig":
        return replace(cls(epochs=DESK_EPOCHS), **overrides).validate()

    def validate(self) -> "RunConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_folds < 2 or not 0 <= self.fold < self.num_folds:
            raise ConfigError(f"fold {self.fold} invalid for {self.num_folds} folds")
        if self.half_window < 1:
            raise ConfigError(f"half_window must be >= 1, got {self.half_window}")
        if self.crop_mode not in ("drop", "clamp"):
            raise ConfigError(f"crop_mode must be drop or clamp, got {self.crop_mode!r}")
        if self.empty_fallback not in ("center", "drop"):
            raise ConfigError(f"empty_fallback must be center or drop, got {self.empty_fallback!r}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        self.region.validate()
        self.network.validate()
        self.enhancement.validate()
        return self

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes).validate() if changes else self

    def to_dict(self, include_paths: bool = True) -> Dict[str, Any]:
        data = {
            "run": {key: getattr(self, key) for key in RUN_KEYS},
            "region": self.region.to_dict(),
            "network": self.network.to_dict(),
            "loss": asdict(self.loss),
            "enhancement": {**asdict(self.enhancement), "tiles": list(self.enhancement.tiles)},
        }
        if include_paths:
            data["paths"] = {key: getattr(self, key) for key in PATH_KEYS}
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        enhancement = dict(data["enhancement"])
        enhancement["tiles"] = tuple(enhancement["tiles"])
        return cls(
            **data["run"],
            region=NetworkConfig.from_dict(data["region"]),
            network=NetworkConfig.from_dict(data["network"]),
            loss=LossWeights(**data["loss"]),
            enhancement=EnhancementParams(**enhancement),
            **data.get("paths", {}),
        )

    def fingerprint(self) -> str:
        """
        SHA-256 over everything that shapes parameters or training dynamics; epochs and
        I/O paths are left out so a resumed run matches its parent
        """
        payload = self.to_dict(include_paths=False)
        payload["run"] = {k: v for k, v in payload["run"].items() if k != "epochs"}
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)


def load_run_config(path: str, base: RunConfig = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    base = base or RunConfig.desk()

    known = set(RUN_KEYS) | set(NETWORK_KEYS) | set(REGION_KEYS) | set(LOSS_KEYS) | set(ENHANCEMENT_KEYS) | set(PATH_KEYS)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {unknown}")

    run, network, region, loss, enhancement = {}, {}, {}, {}, {}
    for key, raw in values.items():
        if raw is None:
            raise ConfigError(f"{key}: missing value")
        if key in RUN_KEYS or key in PATH_KEYS:
            run[key] = _parse_scalar(key, raw, getattr(base, key))
        elif key in NETWORK_KEYS:
            network[key] = _parse_scalar(key, raw, getattr(base.network, key))
        elif key in REGION_KEYS:
            target = REGION_KEYS[key]
            region[target] = _parse_scalar(key, raw, getattr(base.region, target))
        elif key in LOSS_KEYS:
            loss[key] = _parse_scalar(key, raw, getattr(base.loss, key))
        else:
            target = ENHANCEMENT_KEYS[key]
            enhancement[target] = _parse_scalar(key, raw, getattr(base.enhancement, target))

    if "base_channels" in network and "fc_hidden" not in network:
        network["fc_hidden"] = scaled_fc_hidden(network["base_channels"])
    if "dtype" in network:
        region["dtype"] = network["dtype"]
    try:
        cfg = replace(
            base,
            **run,
            network=replace(base.network, **network),
            region=replace(base.region, **region),
            loss=replace(base.loss, **loss),
            enhancement=replace(base.enhancement, **enhancement),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration in {path}: {e}") from e
    return cfg.validate()


def run_config_keys() -> Dict[str, Any]:
    """Every accepted key with its default, for documentation and `--help`"""
    base = RunConfig.desk()
    keys: Dict[str, Any] = {key: getattr(base, key) for key in RUN_KEYS + PATH_KEYS}
    keys.update({key: getattr(base.network, key) for key in NETWORK_KEYS})
    keys.update({key: getattr(base.region, target) for key, target in REGION_KEYS.items()})
    keys.update({key: getattr(base.loss, key) for key in LOSS_KEYS})
    keys.update({key: getattr(base.enhancement, target) for key, target in ENHANCEMENT_KEYS.items()})
    return keys


