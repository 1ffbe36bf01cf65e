"""
Shared machinery for the two architectures: named parameters with He initialization,
the layer plan, and the residual / decoder building blocks
"""

from collections import OrderedDict
from typing import Dict, List, Optional

import numpy as np

from diffcore.ops import add, conv2d, dense, relu, upsample2x
from diffcore.tensor import Parameter, Tensor
from nets.network_config import NetworkConfig
from utils.errors import ShapeError


def decoder_width(in_channels: int) -> int:
    return max(in_channels // 4, 1)


class Network:
    """
    Base class: subclasses declare layers in ``build`` and wire them in ``forward``
    """

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config.validate()
        self.dtype = np.dtype(config.dtype)
        self.parameters: "OrderedDict[str, Parameter]" = OrderedDict()
        self.plan: List[str] = []
        self._rng: Optional[np.random.Generator] = np.random.Generator(np.random.PCG64(seed))
        self.build()
        self._rng = None

    def build(self) -> None:
        raise NotImplementedError

    # -- declaration ---------------------------------------------------------

    def _new_parameter(self, name: str, values: np.ndarray) -> Parameter:
        if name in self.parameters:
            raise ValueError(f"duplicate parameter name {name!r}")
        param = Parameter(values.astype(self.dtype), name=name)
        self.parameters[name] = param
        return param

    def declare_conv(self, name: str, in_channels: int, out_channels: int, kernel: int) -> None:
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        weights = self._rng.standard_normal((out_channels, in_channels, kernel, kernel)) * std
        self._new_parameter(f"{name}.weight", weights)
        self._new_parameter(f"{name}.bias", np.zeros(out_channels))
        self.plan.append(f"conv {name}: {in_channels}->{out_channels} k{kernel}")

    def declare_dense(self, name: str, in_features: int, out_features: int) -> None:
        std = np.sqrt(2.0 / in_features)
        weights = self._rng.standard_normal((out_features, in_features)) * std
        self._new_parameter(f"{name}.weight", weights)
        self._new_parameter(f"{name}.bias", np.zeros(out_features))
        self.plan.append(f"dense {name}: {in_features}->{out_features}")

    def declare_down_stage(self, name: str, in_channels: int, out_channels: int) -> None:
        self.declare_conv(f"{name}.conv1", in_channels, out_channels, 3)
        self.declare_conv(f"{name}.conv2", out_channels, out_channels, 3)
        self.declare_conv(f"{name}.shortcut", in_channels, out_channels, 1)

    def declare_identity_stage(self, name: str, channels: int) -> None:
        self.declare_conv(f"{name}.conv1", channels, channels, 3)
        self.declare_conv(f"{name}.conv2", channels, channels, 3)

    def declare_decoder(self, name: str, in_channels: int, out_channels: int) -> None:
        mid = decoder_width(in_channels)
        self.declare_conv(f"{name}.reduce", in_channels, mid, 1)
        self.declare_conv(f"{name}.conv", mid, out_channels, 3)

    # -- wiring --------------------------------------------------------------

    def conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        weight = self.parameters[f"{name}.weight"]
        return conv2d(x, weight, self.parameters[f"{name}.bias"], stride=stride, padding=weight.shape[-1] // 2)

    def dense(self, name: str, x: Tensor) -> Tensor:
        return dense(x, self.parameters[f"{name}.weight"], self.parameters[f"{name}.bias"])

    def down_stage(self, name: str, x: Tensor) -> Tensor:
        y = relu(self.conv(f"{name}.conv1", x, stride=2))
        y = self.conv(f"{name}.conv2", y)
        return relu(add(y, self.conv(f"{name}.shortcut", x, stride=2)))

    def identity_stage(self, name: str, x: Tensor) -> Tensor:
        y = relu(self.conv(f"{name}.conv1", x))
        y = self.conv(f"{name}.conv2", y)
        return relu(add(y, x))

    def decoder(self, name: str, x: Tensor) -> Tensor:
        y = relu(self.conv(f"{name}.reduce", x))
        y = upsample2x(y)
        return relu(self.conv(f"{name}.conv", y))

    def as_input(self, image: np.ndarray) -> Tensor:
        pixels = np.asarray(image)
        size = self.config.input_size
        if pixels.shape[-2:] != (size, size):
            raise ShapeError(f"input extents {pixels.shape[-2:]} differ from configured {size}×{size}")
        if pixels.ndim == 2:
            pixels = pixels[None]
        return Tensor(pixels.astype(self.dtype))

    # -- bookkeeping ---------------------------------------------------------

    def parameter_list(self) -> List[Parameter]:
        return list(self.parameters.values())

    def parameters_with_prefix(self, prefix: str) -> List[Parameter]:
        return [p for name, p in self.parameters.items() if name.startswith(prefix)]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters.values()))

    def zero_grad(self) -> None:
        for param in self.parameters.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.values.copy()) for name, p in self.parameters.items())

    def momentum_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.momentum_buffer.copy()) for name, p in self.parameters.items())

    def load_state_dict(self, values: Dict[str, np.ndarray], momentum: Optional[Dict[str, np.ndarray]] = None) -> None:
        missing = set(self.parameters) ^ set(values)
        if missing:
            raise ShapeError(f"parameter sets differ: {sorted(missing)}")
        for name, param in self.parameters.items():
            array = np.asarray(values[name])
            if array.shape != param.shape:
                raise ShapeError(f"parameter {name} has shape {param.shape}, got {array.shape}")
            param.values[...] = array
            if momentum is not None:
                param.momentum_buffer[...] = np.asarray(momentum[name])
            param.zero_grad()
