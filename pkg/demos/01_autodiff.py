"""
Reverse-mode gradients and how to check them
=============================================

A tiny network built from geocaps primitives, differentiated with
``backward`` and compared against central finite differences.
"""

import numpy as np

from geocaps import tensor as T
from geocaps.gradcheck import check_gradients, finite_diff_grad

# 64-bit makes finite differences trustworthy down to ~1e-9
T.set_default_dtype(np.float64)
rng = np.random.default_rng(0)

x = T.Tensor(rng.standard_normal((5, 4)))
w1 = T.parameter(rng.standard_normal((4, 8)) * 0.5, name="w1")
b1 = T.parameter(np.zeros(8), name="b1")
w2 = T.parameter(rng.standard_normal((8, 3)) * 0.5, name="w2")


def loss():
    h = T.relu(T.affine(x, w1, b1))
    return T.sum_(T.softplus(T.matmul(h, w2)))


value = loss()
grads = T.backward(value, [w1, b1, w2])
print("loss:", value.item())
print("dL/dw2 from backward:\n", grads[w2])

# the same gradient, one perturbed coordinate at a time
numeric = finite_diff_grad(lambda _: loss(), w2)
print("max |backward - numeric|:", np.abs(grads[w2] - numeric).max())

# sampled check over all parameters at once (norm-based relative error)
print("relative error over 100 sampled coordinates:", check_gradients(loss, [w1, b1, w2], n_coords=100))

# backward never accumulates: a second call gives the same numbers
again = T.backward(loss(), [w1, b1, w2])
print("replay identical:", all(np.array_equal(grads[p], again[p]) for p in (w1, b1, w2)))

T.set_default_dtype(np.float32)
