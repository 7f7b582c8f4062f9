"""Two-branch Siamese GeoCapsNet (variants I and II) and the fully connected baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .capsules import CapsuleConfig, CapsuleHead
from .errors import ConfigError, ShapeError
from .nn import Linear, Module
from .tensor import Tensor

BRANCHES = ("ground", "satellite")


@dataclass
class ModelConfig:
    variant: str = "II"
    head: str = "caps"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    capsules: CapsuleConfig = field(default_factory=CapsuleConfig)
    fc_dim: int = 2048
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in ("I", "II"):
            raise ConfigError(f"variant must be 'I' or 'II', got {self.variant!r}")
        if self.head not in ("caps", "fc"):
            raise ConfigError(f"head must be 'caps' or 'fc', got {self.head!r}")
        if self.fc_dim < 1:
            raise ConfigError("fc_dim must be >= 1")
        self.backbone.validate()
        self.capsules.validate()

    @property
    def code_length(self) -> int:
        return self.capsules.code_length if self.head == "caps" else self.fc_dim


class FCHead(Module):
    """Flatten the feature map and apply a single affine layer (no output relu)."""

    def __init__(self, in_features: int, fc_dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc = self.add_module("fc", Linear(in_features, fc_dim, rng))

    def __call__(self, features: Tensor, mode: str = "train") -> Tensor:
        n = features.shape[0]
        return T.l2_normalize(self.fc(T.reshape(features, (n, -1))), axis=1)


def fc_head_forward(features: Tensor, head: FCHead) -> Tensor:
    return head(features)


class GeoCapsNet(Module):
    """Ground and satellite branches, each a ResNetX followed by a descriptor head.

    The backbones are always separate.  Variant II registers one capsule head
    under ``shared_head`` and hands the same object to both branches.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.backbones = {
            b: self.add_module(f"{b}_backbone", Backbone(config.backbone, rng)) for b in BRANCHES
        }
        c, h, w = config.backbone.output_shape()
        if config.head == "caps" and config.variant == "II":
            shared = self.add_module("shared_head", CapsuleHead(c, (h, w), config.capsules, rng))
            self.heads = {b: shared for b in BRANCHES}
        elif config.head == "caps":
            self.heads = {b: self.add_module(f"{b}_head", CapsuleHead(c, (h, w), config.capsules, rng))
                          for b in BRANCHES}
        else:
            self.heads = {b: self.add_module(f"{b}_head", FCHead(c * h * w, config.fc_dim, rng))
                          for b in BRANCHES}

    def features(self, images: Tensor, branch: str, mode: str = "train") -> Tensor:
        if branch not in BRANCHES:
            raise ShapeError(f"unknown branch {branch!r}; expected one of {BRANCHES}")
        return self.backbones[branch](images, mode)

    def embed(self, images, branch: str, mode: str = "train") -> Tensor:
        """Unit-length descriptors [N, code_length] for a batch of images."""
        feats = self.features(T.as_tensor(images), branch, mode)
        return self.heads[branch](feats, mode)

    def head_parameter_count(self) -> int:
        seen = {id(h): h for h in self.heads.values()}
        return sum(h.parameter_count() for h in seen.values())

    def describe(self) -> list[dict]:
        """Ordered layer list with output shapes and parameter counts, per branch."""
        cfg = self.config
        rows = []
        for b in BRANCHES:
            for row in self.backbones[b].describe():
                rows.append({"branch": b, **row})
            head = self.heads[b]
            shared = cfg.variant == "II" and cfg.head == "caps"
            if isinstance(head, CapsuleHead):
                hp, wp = head.primary.grid(*cfg.backbone.output_shape()[1:])
                rows.append({"branch": b, "name": "PrimaryCaps", "output_size": (hp, wp),
                             "shape": (hp, wp, cfg.capsules.d_primary, cfg.capsules.n_primary),
                             "params": head.primary.parameter_count(), "shared": shared})
                rows.append({"branch": b, "name": "GeoCaps", "shape": (cfg.capsules.n_out, cfg.capsules.d_out),
                             "params": head.geo.parameter_count(), "shared": shared})
            else:
                rows.append({"branch": b, "name": "FC", "shape": (cfg.fc_dim,),
                             "params": head.parameter_count(), "shared": False})
        return rows


def build_model(config: ModelConfig) -> GeoCapsNet:
    return GeoCapsNet(config)


def embed(model: GeoCapsNet, images, branch: str, mode: str = "eval") -> Tensor:
    return model.embed(images, branch, mode)
