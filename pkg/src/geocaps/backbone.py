"""ResNetX: the residual feature extractor feeding the capsule layers.

Two plain convolutions (7x7 stride 2, 3x3 stride 2) followed by four stages
of bottleneck blocks, with batch normalization after every convolution and no
pooling anywhere.  ``width_scale`` shrinks every channel count so a desk-sized
network shares the code path of the full 224x224 model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import BatchNorm, Conv2d, Module
from .tensor import Tensor, conv_output_size

STAGE_NAMES = ("Conv3_x", "Conv4_x", "Conv5_x", "Conv6_x")

# (1x1, 3x3, 1x1) channel triples per stage, as tabulated for ResNetX.
# Conv4_x ends in 256, not the 512 a ResNet-50 would use.
TABLE1_BLOCK_CHANNELS = ((64, 64, 256), (128, 128, 256), (256, 256, 1024), (512, 512, 2048))
TABLE1_BLOCK_COUNTS = (3, 4, 6, 3)
STAGE_STRIDES = (1, 2, 2, 2)


@dataclass
class BackboneConfig:
    input_size: tuple[int, int] = (224, 224)
    stem_channels: int = 64
    block_counts: tuple[int, ...] = TABLE1_BLOCK_COUNTS
    block_channel_specs: tuple[tuple[int, int, int], ...] = TABLE1_BLOCK_CHANNELS
    width_scale: Fraction = field(default_factory=lambda: Fraction(1))
    use_max_pool: bool = False

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.block_counts = tuple(int(v) for v in self.block_counts)
        self.block_channel_specs = tuple(tuple(int(c) for c in t) for t in self.block_channel_specs)
        self.width_scale = Fraction(self.width_scale).limit_denominator(1 << 16) \
            if isinstance(self.width_scale, float) else Fraction(self.width_scale)

    def scaled(self, channels: int) -> int:
        return int(channels * self.width_scale)

    def validate(self) -> None:
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ConfigError(f"input_size must be (H, W), got {self.input_size}")
        if len(self.block_counts) != 4 or len(self.block_channel_specs) != 4:
            raise ConfigError("ResNetX has exactly four residual stages")
        if any(c < 1 for c in self.block_counts):
            raise ConfigError(f"block counts must be >= 1, got {self.block_counts}")
        if self.width_scale <= 0:
            raise ConfigError("width_scale must be positive")
        channels = [self.stem_channels] + [c for t in self.block_channel_specs for c in t]
        zero = [c for c in channels if self.scaled(c) < 1]
        if zero:
            raise ConfigError(f"width_scale {self.width_scale} turns channel count {zero[0]} into 0")
        if self.use_max_pool:
            raise ConfigError("max pooling is not part of ResNetX; use_max_pool must be false")

    @property
    def out_channels(self) -> int:
        return self.scaled(self.block_channel_specs[-1][2])

    def stage_sizes(self) -> list[tuple[int, int]]:
        """Spatial size after Conv1, Conv2 and each residual stage."""
        h, w = self.input_size
        sizes = []
        h, w = conv_output_size(h, 7, 2, 3), conv_output_size(w, 7, 2, 3)
        sizes.append((h, w))
        h, w = conv_output_size(h, 3, 2, 1), conv_output_size(w, 3, 2, 1)
        sizes.append((h, w))
        for stride in STAGE_STRIDES:
            h, w = conv_output_size(h, 3, stride, 1), conv_output_size(w, 3, stride, 1)
            sizes.append((h, w))
        return sizes

    def output_shape(self) -> tuple[int, int, int]:
        h, w = self.stage_sizes()[-1]
        return self.out_channels, h, w


class Bottleneck(Module):
    """1x1 -> 3x3 -> 1x1 residual block; the stride sits on the 3x3 convolution."""

    def __init__(self, in_ch: int, mid1: int, mid2: int, out_ch: int, stride: int, rng):
        super().__init__()
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv1 = self.add_module("conv1", Conv2d(in_ch, mid1, 1, 1, "valid", rng=rng))
        self.bn1 = self.add_module("bn1", BatchNorm(mid1))
        self.conv2 = self.add_module("conv2", Conv2d(mid1, mid2, 3, stride, "same", rng=rng))
        self.bn2 = self.add_module("bn2", BatchNorm(mid2))
        self.conv3 = self.add_module("conv3", Conv2d(mid2, out_ch, 1, 1, "valid", rng=rng))
        self.bn3 = self.add_module("bn3", BatchNorm(out_ch))
        if stride != 1 or in_ch != out_ch:
            self.proj = self.add_module("proj", Conv2d(in_ch, out_ch, 1, stride, "valid", rng=rng))
            self.proj_bn = self.add_module("proj_bn", BatchNorm(out_ch))
        else:
            self.proj = None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"bottleneck expects {self.in_ch} input channels, got shape {x.shape}")
        h = T.relu(self.bn1(self.conv1(x), mode))
        h = T.relu(self.bn2(self.conv2(h), mode))
        h = self.bn3(self.conv3(h), mode)
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x), mode)
        return T.relu(T.add(h, shortcut))


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        stem = config.scaled(config.stem_channels)
        self.conv1 = self.add_module("conv1", Conv2d(3, stem, 7, 2, "same", rng=rng))
        self.bn1 = self.add_module("bn1", BatchNorm(stem))
        self.conv2 = self.add_module("conv2", Conv2d(stem, stem, 3, 2, "same", rng=rng))
        self.bn2 = self.add_module("bn2", BatchNorm(stem))
        self.stages: list[list[Bottleneck]] = []
        in_ch = stem
        for s, (name, count, triple, stride) in enumerate(
                zip(STAGE_NAMES, config.block_counts, config.block_channel_specs, STAGE_STRIDES)):
            a, b, c = (config.scaled(v) for v in triple)
            blocks = []
            for i in range(count):
                block = Bottleneck(in_ch, a, b, c, stride if i == 0 else 1, rng)
                self.add_module(f"{name.lower()}.{i}", block)
                blocks.append(block)
                in_ch = c
            self.stages.append(blocks)

    def __call__(self, images: Tensor, mode: str = "train") -> Tensor:
        h, w = self.config.input_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (h, w):
            raise ShapeError(f"backbone expects [N, 3, {h}, {w}] images, got {images.shape}")
        x = T.relu(self.bn1(self.conv1(images), mode))
        x = T.relu(self.bn2(self.conv2(x), mode))
        for blocks in self.stages:
            for block in blocks:
                x = block(x, mode)
        return x

    def describe(self) -> list[dict]:
        """One row per Table-1 layer: name, output size, kernel/channel spec and repeat count."""
        cfg = self.config
        sizes = cfg.stage_sizes()
        rows = [
            {"name": "Conv1", "output_size": sizes[0], "layers": [(7, self.conv1.out_ch)], "stride": 2,
             "repeat": 1, "params": self.conv1.parameter_count() + self.bn1.parameter_count()},
            {"name": "Conv2", "output_size": sizes[1], "layers": [(3, self.conv2.out_ch)], "stride": 2,
             "repeat": 1, "params": self.conv2.parameter_count() + self.bn2.parameter_count()},
        ]
        for name, blocks, size, stride in zip(STAGE_NAMES, self.stages, sizes[2:], STAGE_STRIDES):
            first = blocks[0]
            rows.append({
                "name": name,
                "output_size": size,
                "layers": [(1, first.conv1.out_ch), (3, first.conv2.out_ch), (1, first.conv3.out_ch)],
                "stride": stride,
                "repeat": len(blocks),
                "params": sum(b.parameter_count() for b in blocks),
            })
        return rows

    def layer_kinds(self) -> set[str]:
        kinds = set()

        def walk(m):
            kinds.add(type(m).__name__)
            for child in m._modules.values():
                walk(child)

        walk(self)
        return kinds


def build_resnetx(config: BackboneConfig, seed: int | np.random.Generator = 0) -> Backbone:
    """Construct a ResNetX with parameters drawn deterministically from ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Backbone(config, rng)
