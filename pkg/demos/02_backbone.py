"""
The residual backbone, full size and desk size
==============================================

Walks the layer table of the 224x224 backbone and shows how the width
scale shrinks it for CPU training.
"""

from fractions import Fraction

import numpy as np

from geocaps import tensor as T
from geocaps.backbone import BackboneConfig, build_resnetx
from geocaps.config import desk_model_config

full = build_resnetx(BackboneConfig(), seed=0)
print(f"{'layer':<10}{'output':<12}{'blocks':<50}{'params':>12}")
for row in full.describe():
    spec = " / ".join(f"{k}x{k},{c}" for k, c in row["layers"])
    size = "x".join(map(str, row["output_size"]))
    print(f"{row['name']:<10}{size:<12}{spec + ' x' + str(row['repeat']):<50}{row['params']:>12,}")
print("total parameters:", f"{full.parameter_count():,}")

# no pooling anywhere: resolution only drops through strided convolutions
print("stage sizes:", BackboneConfig().stage_sizes())

# one forward pass at full size takes a moment on a single core
x = T.Tensor(np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32))
print("feature map:", full(x, "eval").shape)

# the desk preset keeps the layout but divides every channel count by 8
desk_cfg = desk_model_config().backbone
desk = build_resnetx(desk_cfg, seed=0)
print("desk width:", desk_cfg.width_scale, "output:", desk_cfg.output_shape(),
      "parameters:", f"{desk.parameter_count():,}")

# asking for a width that rounds a layer to zero channels is refused
try:
    BackboneConfig(width_scale=Fraction(1, 128)).validate()
except ValueError as err:
    print("refused:", err)
