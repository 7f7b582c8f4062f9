"""
Squash, routing by agreement and the capsule descriptor
=======================================================
"""

import numpy as np

from geocaps import tensor as T
from geocaps.capsules import CapsuleConfig, CapsuleHead, dynamic_routing

T.set_default_dtype(np.float64)

# squash keeps direction and maps length n to n^2 / (1 + n^2)
for s in ([3.0, 4.0], [0.6, 0.8], [0.01, 0.0]):
    v = T.squash(T.Tensor(np.array(s))).data
    print(f"squash({s}) = {np.round(v, 4)}  length {np.linalg.norm(v):.4f}")

# Three input capsules vote for two output capsules.  Two of them agree on
# output 0, so routing shifts their coupling towards it.
u_hat = np.zeros((1, 3, 2, 2))
u_hat[0, 0, 0] = [1.0, 0.0]
u_hat[0, 1, 0] = [0.9, 0.1]
u_hat[0, 2, 0] = [-1.0, 0.0]
u_hat[0, :, 1] = [[0.0, 0.3], [0.3, 0.0], [0.0, -0.3]]
v, state = dynamic_routing(T.Tensor(u_hat), iterations=4)
for it, c in enumerate(state.history, 1):
    print(f"iteration {it}: couplings of input 0 -> {np.round(c[0, 0], 3)}")
print("output lengths:", np.round(np.linalg.norm(v.data[0], axis=-1), 3))

# A whole head: PrimaryCaps conv -> 8-d poses -> routed GeoCaps -> unit descriptor
cfg = CapsuleConfig(n_primary=4, d_primary=8, primary_kernel=(3, 3), n_out=6, d_out=16)
head = CapsuleHead(in_channels=32, feature_hw=(5, 5), config=cfg, rng=np.random.default_rng(0))
feats = T.Tensor(np.random.default_rng(1).standard_normal((2, 32, 5, 5)))
desc = head(feats)
print("input capsules:", head.n_in, "descriptor:", desc.shape, "norms:", np.linalg.norm(desc.data, axis=1))

T.set_default_dtype(np.float32)
