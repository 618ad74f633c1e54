"""Config-driven workflows shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .config import RunConfig
from .data import Dataset, generate_dataset
from .models import (Model, build_concat_mlp, build_implanted_model, build_mean_pool, build_top_model,
                     duplicate_input)
from .sampler import center_indices, gather
from .train import TrainResult, pretrain_frame_backbone, train

logger = logging.getLogger(__name__)

CALIBRATION_VIDEOS = 256


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Same config with the task, training and init seeds all set to ``seed``."""
    return dataclasses.replace(cfg, seed=seed, task=dataclasses.replace(cfg.task, seed=seed),
                               train=dataclasses.replace(cfg.train, seed=seed))


def build_model(cfg: RunConfig, train_ds: Dataset) -> Model:
    rng = np.random.default_rng([cfg.seed, 3])
    C = train_ds.videos.shape[2]
    K, N = cfg.sampler.K, cfg.sampler.N
    n_cls = cfg.task.n_classes
    if cfg.model == "mean-pool":
        return build_mean_pool(C, n_cls, rng=rng)
    if cfg.model == "concat-mlp":
        return build_concat_mlp(K * C, N, n_cls, cfg.hidden, rng=rng)
    n_blocks = 1 if cfg.placement == "top" else max(cfg.depth, 1)
    backbone = pretrain_frame_backbone(train_ds, cfg.hidden, cfg.width, n_blocks=n_blocks, seed=cfg.seed)
    backbone[0] = duplicate_input(backbone[0], K)
    if cfg.placement == "implanted":
        return build_implanted_model(cfg.variant, backbone, n_cls, rng=rng,
                                     temporal_pool_after=cfg.temporal_pool_after)
    calib = gather(train_ds.videos[:CALIBRATION_VIDEOS], center_indices(train_ds.videos.shape[1], cfg.sampler),
                   cfg.sampler)
    return build_top_model(cfg.variant, cfg.depth, K * C, n_cls, rng=rng, backbone=backbone, width=cfg.width,
                           rank=cfg.rank, hidden=cfg.hidden, calibrate_on=calib)


def run_training(cfg: RunConfig, out_dir=None) -> tuple[Model, TrainResult, Dataset]:
    """Generate data, build the configured model, train it; returns (model, result, val set)."""
    train_ds, val_ds = generate_dataset(cfg.task)
    model = build_model(cfg, train_ds)
    logger.info("training %s (%d params)", model.kind, model.param_count())
    res = train(model, cfg.train, train_ds, val_ds, cfg.sampler, out_dir)
    return model, res, val_ds
