"""Central finite differences, the oracle for every backward rule."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return float(value.data.reshape(-1)[0]) if value.data.size == 1 else float("nan")
    return float(value)


def finite_diff_grad(f: Callable, x, h: float = 1e-5, coords=None) -> np.ndarray:
    """Estimate the gradient of scalar ``f`` at ``x`` by central differences.

    ``x`` may be an array or a :class:`Tensor`; in the latter case its data is
    perturbed in place and restored, so ``f`` can close over model parameters.
    Only the flat indices in ``coords`` are estimated when given (others are 0).
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    holder = x if isinstance(x, Tensor) else None
    flat = arr.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    indices = range(flat.size) if coords is None else coords

    def evaluate():
        return _scalar(f(holder if holder is not None else arr))

    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up = evaluate()
        flat[i] = orig - h
        down = evaluate()
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad.reshape(arr.shape)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||)`` over the flattened arrays.

    A vector norm rather than an elementwise ratio: coordinates whose true
    derivative is ~0 would otherwise be dominated by finite-difference noise.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def sample_coords(size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``n`` distinct flat indices (all of them if the tensor is small)."""
    if size <= n:
        return np.arange(size)
    return np.sort(rng.choice(size, size=n, replace=False))


def check_gradients(loss_fn: Callable[[], Tensor], params, n_coords: int = 100,
                    h: float = 1e-5, seed: int = 0) -> float:
    """Relative error between :func:`backward` and finite differences.

    ``loss_fn`` rebuilds the graph from the current parameter values each
    call.  ``n_coords`` coordinates are drawn across all ``params`` together,
    proportionally to their sizes but at least one per tensor.
    """
    rng = np.random.default_rng(seed)
    params = list(params)
    analytic = backward(loss_fn(), params)
    sizes = np.array([p.data.size for p in params])
    share = np.maximum(1, np.ceil(n_coords * sizes / sizes.sum()).astype(int))
    a_all, b_all = [], []
    for p, k in zip(params, share):
        coords = sample_coords(p.data.size, int(k), rng)
        numeric = finite_diff_grad(lambda _: loss_fn(), p, h=h, coords=coords)
        a_all.append(analytic[p].reshape(-1)[coords])
        b_all.append(numeric.reshape(-1)[coords])
    return relative_error(np.concatenate(a_all), np.concatenate(b_all))
