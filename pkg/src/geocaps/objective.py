"""In-batch distances, hard negative mining and the triplet loss family.

Row ``a`` of a batch distance matrix compares ground descriptor ``a`` against
every satellite descriptor of the batch; the diagonal holds the positive pair
and the rest of the row is the negative set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

LOSS_KINDS = ("margin_trihard", "soft_triplet", "soft_trihard")


@dataclass
class LossConfig:
    alpha: float = 15.0
    theta: float = 0.2
    kind: str = "soft_trihard"

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.theta >= 0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


def pairwise_sq_distances(ground: Tensor, satellite: Tensor) -> Tensor:
    """Squared Euclidean distance between every ground/satellite descriptor pair.

    For unit vectors this is ``2 - 2 <g, s>``; tiny negative round-off is
    clipped so every entry is >= 0.
    """
    ground, satellite = T.as_tensor(ground), T.as_tensor(satellite)
    if ground.ndim != 2 or satellite.ndim != 2:
        raise ShapeError(f"expected [M, D] descriptor batches, got {ground.shape} and {satellite.shape}")
    if ground.shape != satellite.shape:
        raise ShapeError(f"descriptor batches differ: {ground.shape} vs {satellite.shape}")
    g2 = T.sum_(T.mul(ground, ground), axis=1, keepdims=True)
    s2 = T.reshape(T.sum_(T.mul(satellite, satellite), axis=1), (1, -1))
    cross = T.matmul(ground, T.transpose(satellite))
    return T.relu(T.add(T.add(g2, s2), T.mul(cross, -2.0)))


def _values(d) -> np.ndarray:
    return d.data if isinstance(d, Tensor) else np.asarray(d)


def hard_negative_indices(d) -> np.ndarray:
    """Per row, the column of the smallest off-diagonal entry (lowest index on ties)."""
    vals = np.array(_values(d), dtype=np.float64)
    m = vals.shape[0]
    if vals.ndim != 2 or vals.shape[1] != m:
        raise ShapeError(f"distance matrix must be square, got {vals.shape}")
    if m < 2:
        raise ContractError("hard negative mining needs at least two items in the batch (no negatives)")
    np.fill_diagonal(vals, np.inf)
    return np.argmin(vals, axis=1)


def hard_negative(a: int, d) -> tuple[int, float]:
    """Index and distance of the closest negative for anchor ``a``."""
    vals = _values(d)
    idx = int(hard_negative_indices(vals)[a])
    return idx, float(vals[a, idx])


def _positive_and_hardest(d: Tensor) -> tuple[Tensor, Tensor]:
    m = d.shape[0]
    eye = np.eye(m, dtype=d.dtype)
    # mining runs on detached values; the chosen entries stay on the graph
    pick = np.zeros((m, m), dtype=d.dtype)
    pick[np.arange(m), hard_negative_indices(d)] = 1
    positive = T.sum_(T.mul(d, eye), axis=1)
    hardest = T.sum_(T.mul(d, pick), axis=1)
    return positive, hardest


def margin_trihard_loss(d: Tensor, theta: float = 0.2) -> Tensor:
    """Mean over anchors of ``(d_pos - min_neg d + theta)_+``."""
    d = T.as_tensor(d)
    positive, hardest = _positive_and_hardest(d)
    hinge = T.relu(T.add(T.add(positive, T.mul(hardest, -1.0)), theta))
    return T.mean(hinge)


def soft_trihard_loss(d: Tensor, alpha: float = 15.0) -> Tensor:
    """Mean over anchors of ``ln(1 + exp(alpha * (d_pos - min_neg d)))``."""
    d = T.as_tensor(d)
    positive, hardest = _positive_and_hardest(d)
    gap = T.add(positive, T.mul(hardest, -1.0))
    return T.mean(T.softplus(T.mul(gap, alpha)))


def soft_triplet_loss(d: Tensor, alpha: float = 15.0) -> Tensor:
    """Weighted soft-margin loss averaged over all M(M-1) in-batch triplets, no mining."""
    d = T.as_tensor(d)
    m = d.shape[0]
    if m < 2:
        raise ContractError("soft triplet loss needs at least two items in the batch")
    eye = np.eye(m, dtype=d.dtype)
    positive = T.sum_(T.mul(d, eye), axis=1, keepdims=True)
    gap = T.add(positive, T.mul(d, -1.0))
    terms = T.mul(T.softplus(T.mul(gap, alpha)), 1.0 - eye)
    return T.mul(T.sum_(terms), 1.0 / (m * (m - 1)))


def compute_loss(d: Tensor, config: LossConfig) -> Tensor:
    if config.kind == "margin_trihard":
        return margin_trihard_loss(d, config.theta)
    if config.kind == "soft_triplet":
        return soft_triplet_loss(d, config.alpha)
    if config.kind == "soft_trihard":
        return soft_trihard_loss(d, config.alpha)
    raise ConfigError(f"unknown loss kind {config.kind!r}")
