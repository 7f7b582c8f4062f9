"""Adam with decoupled weight decay, and the epoch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import PairDataset, epoch_batches
from .errors import ConfigError, NumericalError
from .model import GeoCapsNet
from .objective import LossConfig, compute_loss, pairwise_sq_distances
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_M: int = 32
    epochs: int = 50
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 5e-4
    seed: int = 0

    def validate(self) -> None:
        if self.batch_M < 2:
            raise ConfigError("batch_M must be >= 2 so every anchor has a negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("invalid Adam hyper-parameters")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    Weight decay is decoupled: ``lr * weight_decay * p`` is subtracted
    alongside the adaptive step.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {name} ({bad} entries) at step {state.step + 1}")
    state.step += 1
    b1, b2, lr = config.adam_beta1, config.adam_beta2, config.lr
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        p.data -= (lr * update + lr * config.weight_decay * p.data).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, named_params, config: TrainConfig, state: AdamState | None = None):
        self.params = dict(named_params)
        self.config = config
        self.state = state or AdamState()

    def step(self, grads: dict[str, np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, self.config)


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    batches: int


def batch_loss(model: GeoCapsNet, ground, satellite, loss: LossConfig, mode: str = "train") -> Tensor:
    g = model.embed(ground, "ground", mode)
    s = model.embed(satellite, "satellite", mode)
    return compute_loss(pairwise_sq_distances(g, s), loss)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Shuffling generator for one epoch; depends only on (seed, epoch) so resumed runs replay exactly."""
    return np.random.default_rng([seed, epoch])


def train_epoch(model: GeoCapsNet, dataset: PairDataset, config: TrainConfig, loss: LossConfig,
                optimizer: Adam | None = None, epoch: int = 0) -> EpochMetrics:
    """One shuffled pass of full batches: embed, distances, loss, backward, Adam."""
    config.validate()
    loss.validate()
    optimizer = optimizer or Adam(model.named_parameters(), config)
    names = list(optimizer.params)
    tensors = [optimizer.params[n] for n in names]
    total, count = 0.0, 0
    for ground, satellite, ids in epoch_batches(dataset, config.batch_M, epoch_rng(config.seed, epoch)):
        assert len(np.unique(ids)) == len(ids), "batch contains a repeated location"
        value = batch_loss(model, ground, satellite, loss, "train")
        if not np.isfinite(value.data).all():
            raise NumericalError(f"non-finite loss at epoch {epoch}, batch {count}")
        grads = T.backward(value, tensors)
        optimizer.step({n: grads[t] for n, t in zip(names, tensors)})
        total += value.item()
        count += 1
    return EpochMetrics(epoch, total / max(count, 1), count)


def fit(model: GeoCapsNet, dataset: PairDataset, config: TrainConfig, loss: LossConfig,
        optimizer: Adam | None = None, start_epoch: int = 0, callback=None) -> list[EpochMetrics]:
    """Run epochs ``start_epoch .. config.epochs - 1``, returning their metrics."""
    optimizer = optimizer or Adam(model.named_parameters(), config)
    history = []
    for epoch in range(start_epoch, config.epochs):
        metrics = train_epoch(model, dataset, config, loss, optimizer, epoch)
        logger.info("epoch %d: loss %.5f over %d batches", epoch, metrics.mean_loss, metrics.batches)
        history.append(metrics)
        if callback is not None:
            callback(metrics)
    return history
