from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Tuple

from config import (
    DESK_MAIN_CHANNELS,
    DESK_REGION_CHANNELS,
    FULL_SCALE_CHANNELS,
    FULL_SCALE_FC_HIDDEN,
    NUM_CLASSES,
)
from utils.errors import ConfigError

CASCADE_LEVELS = ("none", "common", "full")
DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class NetworkConfig:
    """
    Declarative description of an architecture variant; every architectural modification is a
    separate switch so ablations can toggle them one at a time
    """
    input_size: int = 64
    base_channels: Tuple[int, int, int, int] = DESK_MAIN_CHANNELS
    multiscale: bool = True
    cascade_level: str = "full"
    multitask: bool = True
    aggregation: bool = True
    fc_hidden: int = 128
    num_classes: int = NUM_CLASSES
    scaled_map_injection: bool = False
    dtype: str = "float32"

    def validate(self) -> "NetworkConfig":
        if self.input_size < 16 or self.input_size % 16:
            raise ConfigError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if len(self.base_channels) != 4 or any(int(c) < 1 for c in self.base_channels):
            raise ConfigError(f"base_channels must be 4 positive widths, got {self.base_channels}")
        if self.cascade_level not in CASCADE_LEVELS:
            raise ConfigError(f"cascade_level must be one of {CASCADE_LEVELS}, got {self.cascade_level!r}")
        if self.aggregation and not self.multitask:
            raise ConfigError("aggregation requires multitask")
        if self.scaled_map_injection and not (self.multiscale and self.uses_map):
            raise ConfigError("scaled_map_injection requires multiscale and a cascade level other than none")
        if self.fc_hidden < 1 or self.num_classes < 2:
            raise ConfigError(f"fc_hidden must be >= 1 and num_classes >= 2, got {self.fc_hidden}/{self.num_classes}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")
        return self

    @property
    def uses_map(self) -> bool:
        return self.cascade_level != "none"

    def with_flags(self, **changes: Any) -> "NetworkConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["base_channels"] = [int(c) for c in self.base_channels]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkConfig":
        fields = dict(data)
        fields["base_channels"] = tuple(int(c) for c in fields["base_channels"])
        return cls(**fields)


def scaled_fc_hidden(base_channels: Tuple[int, ...]) -> int:
    """1024 at LinkNet widths, shrunk with the width divisor at desk scale"""
    return max(1, FULL_SCALE_FC_HIDDEN * int(base_channels[0]) // FULL_SCALE_CHANNELS[0])


def desk_main_config(input_size: int = 64, **flags: Any) -> NetworkConfig:
    return NetworkConfig(
        input_size=input_size,
        base_channels=DESK_MAIN_CHANNELS,
        fc_hidden=scaled_fc_hidden(DESK_MAIN_CHANNELS),
        **flags,
    ).validate()


def desk_region_config(input_size: int = 128) -> NetworkConfig:
    return NetworkConfig(
        input_size=input_size,
        base_channels=DESK_REGION_CHANNELS,
        multiscale=False,
        cascade_level="none",
        multitask=False,
        aggregation=False,
        fc_hidden=scaled_fc_hidden(DESK_REGION_CHANNELS),
    ).validate()


def full_scale_config(input_size: int = 256) -> NetworkConfig:
    return NetworkConfig(
        input_size=input_size,
        base_channels=FULL_SCALE_CHANNELS,
        fc_hidden=FULL_SCALE_FC_HIDDEN,
    ).validate()


def _conv(in_channels: int, out_channels: int, kernel: int) -> int:
    return out_channels * in_channels * kernel * kernel + out_channels


def _dense(in_features: int, out_features: int) -> int:
    return in_features * out_features + out_features


def _down(in_channels: int, out_channels: int) -> int:
    return _conv(in_channels, out_channels, 3) + _conv(out_channels, out_channels, 3) + _conv(in_channels, out_channels, 1)


def _decoder(in_channels: int, out_channels: int) -> int:
    mid = max(in_channels // 4, 1)
    return _conv(in_channels, mid, 1) + _conv(mid, out_channels, 3)


def parameter_count(cfg: NetworkConfig, architecture: str = "mscmt") -> int:
    """
    Closed-form weight count of the layer plan, independent of any built network
    """
    c0, c1, c2, c3 = (int(w) for w in cfg.base_channels)
    if architecture == "region":
        return (
            _conv(1, c0, 3)
            + _down(c0, c0) + _down(c0, c1) + _down(c1, c2) + _down(c2, c3)
            + _decoder(c3, c2) + _decoder(c2, c1) + _decoder(c1, c0) + _decoder(c0, c0)
            + _conv(c0, 1, 1)
        )
    if architecture != "mscmt":
        raise ConfigError(f"unknown architecture {architecture!r}")

    extra = (1 + int(cfg.scaled_map_injection)) if cfg.multiscale else 0
    first = 1 + int(cfg.uses_map)
    full = int(cfg.cascade_level == "full")
    total = _down(first, c0) + _down(c0 + extra, c1) + _down(c1 + extra, c2) + _down(c2 + extra, c3)
    total += sum(2 * _conv(c, c, 3) for c in (c0, c1, c2, c3))
    total += _decoder(c3, c2) + _decoder(c2 + full, c1) + _decoder(c1 + full, c0) + _decoder(c0 + full, c0)
    total += _conv(c0 + full, 1, 1)
    if cfg.multitask:
        width = c3 + (c0 + c1 + c2 + c3 if cfg.aggregation else 0)
        total += _dense(width, cfg.fc_hidden) + _dense(cfg.fc_hidden, cfg.num_classes)
    return total
