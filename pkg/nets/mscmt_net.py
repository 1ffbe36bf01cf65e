"""
Multi-scale cascaded multi-task network.

Differences from the region net, each behind its own NetworkConfig switch:
  * no stem; the first ResBlock consumes the full-resolution input
  * two residual sub-stages per encoder block
  * multiscale: the image downscaled by 2/4/8 is concatenated onto encoder outputs 1-3
  * cascade common: the preliminary map is stacked with the image before block 1
  * cascade full: the map, downscaled to each decoder resolution, is concatenated onto
    decoder outputs and once more at full resolution before the 1×1 head
  * multitask: a classification head reading the max-pooled bottleneck
  * aggregation: the max-pools of all four encoder outputs are appended to that vector
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from diffcore.ops import add, concat_channels, global_maxpool, relu, sigmoid, softmax
from diffcore.tensor import Tensor
from imgops.enhancement import downscale
from nets.network import Network
from nets.network_config import NetworkConfig
from utils.errors import ShapeError
from utils.logger import log_pipeline_step

ENCODER_BLOCKS = ("enc1", "enc2", "enc3", "enc4")
DECODER_BLOCKS = ("dec1", "dec2", "dec3", "dec4")
# decoder j emits input/8, /4, /2, /1
DECODER_SCALES = (8, 4, 2, 1)


@dataclass
class PredictionPair:
    seg_map: Tensor
    class_probs: Optional[Tensor] = None


class MscmtNet(Network):

    def _injected_channels(self) -> int:
        cfg = self.config
        if not cfg.multiscale:
            return 0
        return 1 + (1 if cfg.scaled_map_injection else 0)

    def classifier_width(self) -> int:
        c = [int(w) for w in self.config.base_channels]
        width = c[3]
        if self.config.aggregation:
            width += sum(c)
        return width

    def build(self) -> None:
        cfg = self.config
        c = [int(w) for w in cfg.base_channels]
        in_channels = 1 + (1 if cfg.uses_map else 0)
        extra = self._injected_channels()
        for i, name in enumerate(ENCODER_BLOCKS):
            self.declare_down_stage(f"{name}.sub1", in_channels, c[i])
            self.declare_identity_stage(f"{name}.sub2", c[i])
            in_channels = c[i] + (extra if i < 3 else 0)

        full = 1 if cfg.cascade_level == "full" else 0
        decoder_in = [c[3], c[2] + full, c[1] + full, c[0] + full]
        decoder_out = [c[2], c[1], c[0], c[0]]
        for j, name in enumerate(DECODER_BLOCKS):
            self.declare_decoder(name, decoder_in[j], decoder_out[j])
        self.declare_conv("head", c[0] + full, 1, 1)

        if cfg.multitask:
            self.declare_dense("cls.fc1", self.classifier_width(), cfg.fc_hidden)
            self.declare_dense("cls.fc2", cfg.fc_hidden, cfg.num_classes)

    def _constant(self, array: np.ndarray) -> Tensor:
        return Tensor(np.asarray(array)[None].astype(self.dtype))

    def forward(self, image: np.ndarray, init_map: Optional[np.ndarray] = None) -> PredictionPair:
        cfg = self.config
        image = np.asarray(image, dtype=np.float64)
        if cfg.uses_map:
            if init_map is None:
                raise ShapeError("this network cascades the preliminary map but none was given")
            prob_map = np.asarray(init_map, dtype=np.float64)
            x = concat_channels(self._constant(image), self._constant(prob_map))
        else:
            prob_map = None
            x = self._constant(image)

        encoded: List[Tensor] = []
        for i, name in enumerate(ENCODER_BLOCKS):
            e = self.down_stage(f"{name}.sub1", x)
            e = self.identity_stage(f"{name}.sub2", e)
            encoded.append(e)
            x = e
            if cfg.multiscale and i < 3:
                factor = 2 ** (i + 1)
                x = concat_channels(x, self._constant(downscale(image, factor)))
                if cfg.scaled_map_injection:
                    x = concat_channels(x, self._constant(downscale(prob_map, factor)))

        d = encoded[3]
        for j, name in enumerate(DECODER_BLOCKS):
            d = self.decoder(name, d)
            if j < 3:
                d = add(d, encoded[2 - j])
            if cfg.cascade_level == "full":
                d = concat_channels(d, self._constant(downscale(prob_map, DECODER_SCALES[j])))
        seg_map = sigmoid(self.conv("head", d))

        if not cfg.multitask:
            return PredictionPair(seg_map=seg_map)

        pooled = global_maxpool(encoded[3])
        if cfg.aggregation:
            for e in encoded:
                pooled = concat_channels(pooled, global_maxpool(e))
        hidden = relu(self.dense("cls.fc1", pooled))
        class_probs = softmax(self.dense("cls.fc2", hidden))
        return PredictionPair(seg_map=seg_map, class_probs=class_probs)


def build_mscmt_net(cfg: NetworkConfig, seed: int = 0) -> MscmtNet:
    net = MscmtNet(cfg, seed=seed)
    log_pipeline_step(
        "Build MSCMT net",
        "COMPLETED",
        f"multiscale={cfg.multiscale} cascade={cfg.cascade_level} multitask={cfg.multitask} "
        f"aggregation={cfg.aggregation} weights={net.parameter_count()}",
    )
    return net


def forward_mscmt(net: MscmtNet, img: np.ndarray, init_map: Optional[np.ndarray] = None) -> PredictionPair:
    size = net.config.input_size
    image = np.asarray(img)
    if image.shape != (size, size):
        raise ShapeError(f"image extents {image.shape} differ from configured {size}×{size}")
    if init_map is not None and np.shape(init_map) != (size, size):
        raise ShapeError(f"map extents {np.shape(init_map)} differ from configured {size}×{size}")
    return net.forward(image, init_map if net.config.uses_map else None)
