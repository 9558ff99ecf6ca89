"""AdamW training loop with linear (power-1 polynomial) learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDataset
from .losses import LossConfig
from .model import (AugmentConfig, FeatureTensor, ModelParams, augment, backward_batch,
                    input_dropout_mask)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    pose_dropout: float = 0.3
    input_dropout: float = 0.2
    feature_noise_sigma: float = 0.1
    feature_dropout: float = 0.01
    pose_translation: float = 0.2
    pose_rotation_deg: float = 5.0
    horizon: float = 10.0
    input_window: float = 2.0
    seed: int = 0
    lr_power: float = 1.0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    augment: bool = True
    prior_init: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not self.input_window < self.horizon:
            raise ValueError("input window n must be shorter than the horizon T")
        for name in ("pose_dropout", "input_dropout", "feature_dropout"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.feature_noise_sigma, self.feature_dropout,
                             self.pose_translation, self.pose_rotation_deg, self.pose_dropout)


@dataclass
class TrainingSample:
    features: FeatureTensor
    gt: object          # DescriptorMaps, normalized
    weights: np.ndarray


class AdamW:
    def __init__(self, params: ModelParams, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = params.zeros_like().arrays
        self.v = params.zeros_like().arrays
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.arrays.items():
            g = grads.arrays[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p -= lr * (update + self.wd * p)


def poly_lr(base: float, step: int, total: int, power: float = 1.0) -> float:
    if total <= 0:
        return base
    return base * (1.0 - step / total) ** power


def train(samples: Sequence[TrainingSample], cfg: TrainConfig,
          params: Optional[ModelParams] = None):
    """Fit a predictor; returns ``(params, per-epoch mean training loss)``."""
    samples = list(samples)
    if not samples:
        raise EmptyDataset("training needs at least one sample")
    spec = samples[0].features.spec
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = ModelParams.init(spec, cfg.seed)
        if cfg.prior_init:
            params.init_priors([s.gt for s in samples])
    else:
        params = params.copy()
    opt = AdamW(params, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    aug = cfg.augment_config()
    per_epoch = math.ceil(len(samples) / cfg.batch_size)
    total_steps = per_epoch * cfg.epochs
    curve = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for b in range(per_epoch):
            batch = [samples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if cfg.augment:
                x = np.stack([augment(s.features, aug, rng)[0].data for s in batch])
                mask = input_dropout_mask(x.shape, cfg.input_dropout, rng)
            else:
                x = np.stack([s.features.data for s in batch])
                mask = None
            loss, grads = backward_batch(params, x, [s.gt for s in batch],
                                         [s.weights for s in batch], cfg.loss, mask)
            opt.step(params, grads, poly_lr(cfg.learning_rate, step, total_steps, cfg.lr_power))
            losses.append(loss)
            step += 1
        curve.append(float(np.mean(losses)))
    return params, curve
