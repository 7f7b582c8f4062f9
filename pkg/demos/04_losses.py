"""
Hard negatives and the soft-margin triplet family
=================================================

Row ``a`` of a batch distance matrix holds ground image ``a`` against every
satellite image; the diagonal is the matching pair.
"""

import numpy as np

from geocaps import tensor as T
from geocaps.objective import (hard_negative, margin_trihard_loss, pairwise_sq_distances, soft_trihard_loss,
                               soft_triplet_loss)

T.set_default_dtype(np.float64)
rng = np.random.default_rng(0)

g = rng.standard_normal((4, 6))
s = g + 0.9 * rng.standard_normal((4, 6))   # satellite views close to their ground views
g /= np.linalg.norm(g, axis=1, keepdims=True)
s /= np.linalg.norm(s, axis=1, keepdims=True)
D = pairwise_sq_distances(T.Tensor(g), T.Tensor(s))
print("distances (squared Euclidean, in [0, 4]):\n", np.round(D.data, 3))

for a in range(4):
    idx, dist = hard_negative(a, D)
    print(f"anchor {a}: positive {D.data[a, a]:.3f}, hardest negative {idx} at {dist:.3f}")

print("margin trihard (theta 0.2):", margin_trihard_loss(D, 0.2).item())
print("soft triplet, all pairs:   ", soft_triplet_loss(D, 15).item())
print("soft trihard:              ", soft_trihard_loss(D, 15).item())

# only the positive and the mined negative of each row receive gradient
Dp = T.parameter(D.data)
soft_trihard_loss(Dp, 15).backward()
print("non-zero gradient entries:\n", (Dp.grad != 0).astype(int))

# the soft margin stays finite where exp would overflow
print("softplus(15 * 10) =", T.softplus(T.Tensor(np.array([150.0]))).data[0])

T.set_default_dtype(np.float32)
