import time
from typing import Callable, List, Optional, Sequence

import numpy as np

from datapipe.folds import FoldPlan
from datapipe.sample import Sample
from diffcore.ops import add, scale
from diffcore.optim import sgd_momentum_step
from diffcore.tensor import Graph, Tensor, backward
from harness.checkpoint import Checkpoint, checkpoint_save
from harness.run_config import RunConfig
from lossmetrics.losses import LossWeights, classification_loss, combined_loss, region_loss, weighted_dice_loss
from nets.mscmt_net import MscmtNet, build_mscmt_net, forward_mscmt
from nets.network import Network
from nets.region_net import RegionNet, build_region_net, forward_region
from utils.errors import CheckpointError, ConfigError, DataError, NumericError
from utils.logger import log_alert, log_pipeline_step

SampleLoss = Callable[[Network, Sample], Tensor]


def region_sample_loss(net: RegionNet, sample: Sample) -> Tensor:
    return region_loss(sample.mask, forward_region(net, sample.image))


def main_sample_loss(net: MscmtNet, sample: Sample, weights: LossWeights) -> Tensor:
    pair = forward_mscmt(net, sample.image, sample.prelim_map)
    if sample.mask.any():
        seg = weighted_dice_loss(sample.mask, pair.seg_map, weights)
    else:
        # a crop that missed the tumor has no boundary to weight
        seg = region_loss(sample.mask, pair.seg_map)
    if pair.class_probs is None:
        return seg
    return combined_loss(seg, classification_loss(sample.label, pair.class_probs), weights)


class Trainer:
    """
    Minibatch SGD with momentum: per batch the mean of the per-sample losses is
    backpropagated once, then every parameter is stepped. Sample order is reshuffled
    each epoch from a generator seeded by the run seed, whose state travels with the
    checkpoint so resumed runs continue the same sequence.
    """

    def __init__(self, cfg: RunConfig, stage: str):
        self.logger = log_pipeline_step(f"Trainer ({stage})", "STARTED")
        self.cfg = cfg
        self.stage = stage

    def fit(
        self,
        net: Network,
        samples: Sequence[Sample],
        loss_fn: SampleLoss,
        resume: Optional[Checkpoint] = None,
        checkpoint_path: Optional[str] = None,
    ) -> Checkpoint:
        cfg = self.cfg
        if not samples:
            raise DataError("empty training set")
        params = net.parameter_list()
        shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seed))
        trace: List[float] = []
        first_epoch = 0

        if resume is not None:
            if resume.stage != self.stage:
                raise CheckpointError(f"cannot resume {self.stage} training from a {resume.stage} checkpoint")
            if resume.epoch > cfg.epochs:
                raise ConfigError(f"checkpoint is at epoch {resume.epoch}, beyond the requested {cfg.epochs}")
            net.load_state_dict(resume.parameters, resume.momentum)
            shuffle_rng.bit_generator.state = resume.rng_state
            trace = list(resume.loss_trace)
            first_epoch = resume.epoch
            self.logger.info(f"Resuming {self.stage} training at epoch {first_epoch}")

        started = time.perf_counter()
        n = len(samples)
        for epoch in range(first_epoch, cfg.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                batch = [samples[i] for i in order[start:start + cfg.batch_size]]
                with Graph() as graph:
                    loss = None
                    for sample in batch:
                        term = loss_fn(net, sample)
                        loss = term if loss is None else add(loss, term)
                    loss = scale(loss, 1.0 / len(batch))
                value = loss.item()
                if not np.isfinite(value):
                    log_alert("NaN loss", f"{self.stage} epoch {epoch + 1}: loss {value}", "CRITICAL")
                    raise NumericError(f"non-finite loss {value} in {self.stage} training, epoch {epoch + 1}")
                backward(graph, loss)
                sgd_momentum_step(params, cfg.lr, cfg.momentum)
                total += value * len(batch)
            trace.append(total / n)
            self.logger.info(f"[{self.stage}] epoch {epoch + 1}/{cfg.epochs} loss {trace[-1]:.6f}")

        self.logger.info(f"[{self.stage}] training finished in {time.perf_counter() - started:.1f}s")
        ckpt = Checkpoint(
            stage=self.stage,
            config=cfg.to_dict(include_paths=False),
            fingerprint=cfg.fingerprint(),
            epoch=cfg.epochs,
            parameters=net.state_dict(),
            momentum=net.momentum_dict(),
            rng_state=shuffle_rng.bit_generator.state,
            loss_trace=trace,
        )
        if checkpoint_path:
            checkpoint_save(ckpt, checkpoint_path)
        return ckpt


def _check_extents(samples: Sequence[Sample], size: int, what: str) -> None:
    wrong = [s.id for s in samples if s.shape != (size, size)]
    if wrong:
        raise DataError(f"{len(wrong)} samples do not match the {what} input size {size}: {wrong[:5]}")


def cmd_train_region(
    cfg: RunConfig,
    samples: Sequence[Sample],
    plan: FoldPlan,
    checkpoint_path: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
) -> Checkpoint:
    """Train the region net on every fold except ``cfg.fold``"""
    train, _ = plan.split(samples, cfg.fold)
    _check_extents(train, cfg.region.input_size, "region net")
    net = build_region_net(cfg.region, seed=cfg.seed)
    return Trainer(cfg, "region").fit(net, train, region_sample_loss, resume, checkpoint_path)


def cmd_train_main(
    cfg: RunConfig,
    samples: Sequence[Sample],
    plan: FoldPlan,
    checkpoint_path: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
) -> Checkpoint:
    """
    Train the multiscale cascaded net on cropped samples with the combined loss (or the
    weighted Dice alone when multitask is off)
    """
    if cfg.network.uses_map and any(s.prelim_map is None for s in samples):
        raise ConfigError(f"cascade level {cfg.network.cascade_level!r} needs preliminary maps on every sample")
    train, _ = plan.split(samples, cfg.fold)
    _check_extents(train, cfg.network.input_size, "main net")
    net = build_mscmt_net(cfg.network, seed=cfg.seed)
    weights = cfg.loss
    return Trainer(cfg, "main").fit(net, train, lambda n, s: main_sample_loss(n, s, weights), resume, checkpoint_path)


def network_from_checkpoint(ckpt: Checkpoint) -> Network:
    net_cfg = ckpt.network_config()
    net = build_region_net(net_cfg) if ckpt.stage == "region" else build_mscmt_net(net_cfg)
    net.load_state_dict(ckpt.parameters, ckpt.momentum)
    return net
