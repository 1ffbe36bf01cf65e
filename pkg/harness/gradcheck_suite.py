"""
Finite-difference verification of every differentiable operation and of the full loss
chains of both networks, all at double precision
"""

import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from config import GRADCHECK_POINTS, GRADCHECK_STEP, GRADCHECK_TOLERANCE
from diffcore.gradcheck import finite_difference_check, spot_check_parameters
from diffcore.ops import (
    activation,
    add,
    concat_channels,
    conv2d,
    dense,
    flatten,
    global_maxpool,
    maxpool2d,
    negative_log_likelihood,
    scale,
    slice_channels,
    soft_dice_loss,
    sum_all,
    upsample2x,
)
from diffcore.tensor import Tensor
from lossmetrics.losses import LossWeights, classification_loss, combined_loss, region_loss, weighted_dice_loss
from nets.mscmt_net import build_mscmt_net, forward_mscmt
from nets.network_config import NetworkConfig
from nets.region_net import build_region_net, forward_region
from utils.errors import NumericError
from utils.logger import log_alert, log_pipeline_step

# (closure over the point tensors, point factory)
OpCase = Tuple[Callable[..., Tensor], Callable[[np.random.Generator], List[Tensor]]]


def _t(values: np.ndarray) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def _projector(rng: np.random.Generator, size: int) -> Callable[[Tensor], Tensor]:
    """Random fixed linear functional, so every output coordinate reaches the scalar"""
    weights = Tensor(rng.standard_normal((1, size)))
    bias = Tensor(np.zeros(1))

    def project(output: Tensor) -> Tensor:
        return dense(flatten(output), weights, bias)

    return project


def _op_cases(rng: np.random.Generator) -> Dict[str, OpCase]:
    p_conv = _projector(rng, 3 * 3 * 3)
    p_conv_padded = _projector(rng, 3 * 6 * 6)
    p_pool = _projector(rng, 2 * 3 * 3)
    p_gpool = _projector(rng, 3)
    p_up = _projector(rng, 2 * 6 * 6)
    p_act = _projector(rng, 2 * 3 * 3)
    p_soft = _projector(rng, 5)
    p_cat = _projector(rng, 3 * 4 * 4)
    p_slice = _projector(rng, 2 * 4 * 4)
    p_add = _projector(rng, 2 * 4 * 4)
    p_dense = _projector(rng, 4)
    target = (rng.random((6, 6)) > 0.5).astype(np.float64)
    dice_weights = 1.0 + rng.random((6, 6))

    return {
        "conv2d_stride2": (
            lambda x, w, b: p_conv(conv2d(x, w, b, stride=2, padding=0)),
            lambda r: [_t(r.standard_normal((2, 7, 7))), _t(r.standard_normal((3, 2, 3, 3))), _t(r.standard_normal(3))],
        ),
        "conv2d_padded": (
            lambda x, w, b: p_conv_padded(conv2d(x, w, b, stride=1, padding=1)),
            lambda r: [_t(r.standard_normal((2, 6, 6))), _t(r.standard_normal((3, 2, 3, 3))), _t(r.standard_normal(3))],
        ),
        "maxpool2d": (
            lambda x: p_pool(maxpool2d(x, 2)),
            lambda r: [_t(r.standard_normal((2, 6, 6)))],
        ),
        "global_maxpool": (
            lambda x: p_gpool(global_maxpool(x)),
            lambda r: [_t(r.standard_normal((3, 4, 4)))],
        ),
        "upsample2x": (
            lambda x: p_up(upsample2x(x)),
            lambda r: [_t(r.standard_normal((2, 3, 3)))],
        ),
        "relu": (
            lambda x: p_act(activation("relu", x)),
            lambda r: [_t(r.standard_normal((2, 3, 3)))],
        ),
        "sigmoid": (
            lambda x: p_act(activation("sigmoid", x)),
            lambda r: [_t(r.standard_normal((2, 3, 3)))],
        ),
        "softmax": (
            lambda x: p_soft(activation("softmax", x)),
            lambda r: [_t(r.standard_normal(5))],
        ),
        "concat_channels": (
            lambda a, b: p_cat(concat_channels(a, b)),
            lambda r: [_t(r.standard_normal((1, 4, 4))), _t(r.standard_normal((2, 4, 4)))],
        ),
        "slice_channels": (
            lambda x: p_slice(slice_channels(x, 1, 3)),
            lambda r: [_t(r.standard_normal((4, 4, 4)))],
        ),
        "add": (
            lambda a, b: p_add(add(a, b)),
            lambda r: [_t(r.standard_normal((2, 4, 4))), _t(r.standard_normal((2, 4, 4)))],
        ),
        "scale_sum": (
            lambda x: sum_all(scale(x, -1.7)),
            lambda r: [_t(r.standard_normal((2, 3, 3)))],
        ),
        "dense": (
            lambda x, w, b: p_dense(dense(x, w, b)),
            lambda r: [_t(r.standard_normal(6)), _t(r.standard_normal((4, 6))), _t(r.standard_normal(4))],
        ),
        "soft_dice_loss": (
            lambda s: soft_dice_loss(s, target, dice_weights),
            lambda r: [_t(r.uniform(0.05, 0.95, (1, 6, 6)))],
        ),
        "negative_log_likelihood": (
            lambda z: negative_log_likelihood(activation("softmax", z), 1),
            lambda r: [_t(r.standard_normal(3))],
        ),
    }


def _tiny_networks() -> Tuple[NetworkConfig, NetworkConfig]:
    region = NetworkConfig(
        input_size=16, base_channels=(2, 2, 3, 3), multiscale=False, cascade_level="none",
        multitask=False, aggregation=False, dtype="float64",
    ).validate()
    main = NetworkConfig(
        input_size=16, base_channels=(2, 2, 3, 3), multiscale=True, cascade_level="full",
        multitask=True, aggregation=True, fc_hidden=4, dtype="float64",
    ).validate()
    return region, main


def check_operations(seed: int = 0, points: int = GRADCHECK_POINTS, h: float = GRADCHECK_STEP) -> Dict[str, float]:
    """Worst relative error per operation over ``points`` random double-precision points"""
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (closure, make_point) in _op_cases(rng).items():
        errors[name] = max(finite_difference_check(closure, make_point(rng), h) for _ in range(points))
    return errors


def check_networks(seed: int = 0, points: int = GRADCHECK_POINTS, h: float = GRADCHECK_STEP) -> Dict[str, float]:
    """Spot checks of ``points`` random parameter coordinates through each full loss chain"""
    rng = np.random.default_rng(seed)
    region_cfg, main_cfg = _tiny_networks()
    size = region_cfg.input_size
    image = rng.random((size, size))
    mask = np.zeros((size, size), dtype=bool)
    mask[5:11, 4:12] = True
    prelim = rng.uniform(0.05, 0.95, (size, size))
    weights = LossWeights()

    region_net = build_region_net(region_cfg, seed=seed)
    main_net = build_mscmt_net(main_cfg, seed=seed)

    def region_chain() -> Tensor:
        return region_loss(mask, forward_region(region_net, image))

    def main_chain() -> Tensor:
        pair = forward_mscmt(main_net, image, prelim)
        return combined_loss(
            weighted_dice_loss(mask, pair.seg_map, weights),
            classification_loss(2, pair.class_probs),
            weights,
        )

    return {
        "region_net": spot_check_parameters(region_chain, region_net.parameter_list(), points, rng, h),
        "mscmt_net": spot_check_parameters(main_chain, main_net.parameter_list(), points, rng, h),
    }


def run_gradcheck(
    seed: int = 0,
    points: int = GRADCHECK_POINTS,
    tolerance: float = GRADCHECK_TOLERANCE,
    h: float = GRADCHECK_STEP,
) -> Dict[str, float]:
    """
    Runs every check and raises NumericError naming the operations above ``tolerance``
    """
    logger = log_pipeline_step("Gradient check", "STARTED", f"{points} points per check, tolerance {tolerance:g}")
    started = time.perf_counter()
    errors = check_operations(seed, points, h)
    errors.update(check_networks(seed, points, h))
    for name, error in errors.items():
        logger.info(f"{name:<24} max relative error {error:.3e}")

    failed = sorted(name for name, error in errors.items() if not error <= tolerance)
    if failed:
        log_alert("Gradient check", f"above tolerance: {', '.join(failed)}", "ERROR")
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    log_pipeline_step("Gradient check", "COMPLETED", f"{len(errors)} checks in {time.perf_counter() - started:.1f}s")
    return errors
