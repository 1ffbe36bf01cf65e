"""
Preliminary tumor-region network: a LinkNet-style encoder-decoder producing a
probability map at input resolution
"""

import numpy as np

from diffcore.ops import add, sigmoid
from diffcore.tensor import Tensor
from nets.network import Network
from nets.network_config import NetworkConfig
from utils.logger import log_pipeline_step

ENCODER_BLOCKS = ("enc1", "enc2", "enc3", "enc4")
DECODER_BLOCKS = ("dec1", "dec2", "dec3", "dec4")


class RegionNet(Network):
    """
    stem conv -> 4 encoder ResBlocks (one stride-2 sub-stage each) -> 4 decoder blocks
    with additive skips -> 1×1 conv -> sigmoid

    The multiscale / cascade / multitask switches of the config do not apply here.
    """

    def build(self) -> None:
        c = [int(w) for w in self.config.base_channels]
        self.declare_conv("stem", 1, c[0], 3)
        widths = [c[0]] + c
        for i, name in enumerate(ENCODER_BLOCKS):
            self.declare_down_stage(f"{name}.sub1", widths[i], widths[i + 1])
        decoder_widths = [c[3], c[2], c[1], c[0], c[0]]
        for j, name in enumerate(DECODER_BLOCKS):
            self.declare_decoder(name, decoder_widths[j], decoder_widths[j + 1])
        self.declare_conv("head", c[0], 1, 1)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv("stem", x)
        encoded = []
        for name in ENCODER_BLOCKS:
            h = self.down_stage(f"{name}.sub1", h)
            encoded.append(h)

        d = encoded[3]
        for j, name in enumerate(DECODER_BLOCKS):
            d = self.decoder(name, d)
            if j < 3:
                d = add(d, encoded[2 - j])
        return sigmoid(self.conv("head", d))


def build_region_net(cfg: NetworkConfig, seed: int = 0) -> RegionNet:
    net = RegionNet(cfg, seed=seed)
    log_pipeline_step("Build region net", "COMPLETED", f"{len(net.parameters)} tensors, {net.parameter_count()} weights")
    return net


def forward_region(net: RegionNet, img: np.ndarray) -> Tensor:
    """1×H×W tumor probability map; records onto the active graph if one is open"""
    return net.forward(net.as_input(img))
