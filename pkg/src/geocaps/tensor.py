"""Dense tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a :class:`Tensor`.  A primitive
produces a new tensor that remembers its operands and a local backward rule;
:func:`backward` walks that record in reverse topological order.

The primitive set is deliberately small: conv2d, batch_norm, affine, relu,
softmax, add/mul, matmul, reshape/transpose, sum, l2_normalize and squash,
plus softplus for the soft-margin losses.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_DEFAULT_DTYPE = np.float32

EPS_NORM = 1e-12


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default floating dtype (e.g. ``np.float64`` for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """N-dimensional array that can take part in gradient computation.

    Args:
        data: array-like values. Integer or bool input is cast to the default dtype.
        requires_grad: whether gradients should be tracked through this tensor.
        name: optional label, used by parameter tables and error messages.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None,
                 _op: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: np.ndarray | None = None
        self.degenerate: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- conveniences ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def backward(self) -> dict["Tensor", np.ndarray]:
        """Run :func:`backward` from this scalar and store gradients on ``.grad``."""
        grads = backward(self)
        for t, g in grads.items():
            t.grad = g
        return grads


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    tracked = tuple(parents)
    needs = any(p.requires_grad for p in tracked)
    return Tensor(data, requires_grad=needs, _parents=tracked if needs else (),
                  _backward=rule if needs else None, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# graph traversal
# ----------------------------------------------------------------------
def trace(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of the tensors ``root`` depends on (root last)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to graph leaves.

    Returns a fresh mapping each call; nothing accumulates between calls, so
    replaying the backward pass gives identical results.  If ``params`` is
    given the mapping contains exactly those tensors, with zeros for any that
    the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    order = trace(loss)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    by_id = {id(t): t for t in order}
    if params is None:
        return {by_id[k]: v for k, v in grads.items() if by_id[k]._backward is None and by_id[k].requires_grad}
    out = {}
    for p in params:
        g = grads.get(id(p))
        out[p] = np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False)
    return out


# ----------------------------------------------------------------------
# elementwise and structural primitives
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), rule, "add")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        out = a.data * c
        return _make(out, (a,), lambda g: (_unbroadcast(g * c, a.shape),), "scale")
    out = a.data * b.data

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), rule, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * mask,), "relu")


def softplus(x: Tensor) -> Tensor:
    """``ln(1 + e^x)`` evaluated as ``max(x, 0) + ln(1 + e^-|x|)`` so large inputs never overflow."""
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    # logistic sigmoid, written to avoid overflow on either side
    e = np.exp(-np.abs(d))
    sig = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), rule, "matmul")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer ``x @ weight + bias`` for ``x`` of shape [N, D_in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def rule(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, rule, "affine")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), rule, "softmax")


# ----------------------------------------------------------------------
# vector normalizations
# ----------------------------------------------------------------------
def l2_normalize(v: Tensor, axis: int = -1, eps: float = EPS_NORM) -> Tensor:
    """Scale vectors along ``axis`` to unit Euclidean norm.

    Vectors with norm <= ``eps`` come out as zeros, and the returned tensor's
    ``degenerate`` attribute marks them (shape of ``v`` without ``axis``).
    """
    if v.ndim == 0 or v.shape[axis] < 1:
        raise ContractError("l2_normalize needs at least one component")
    norm = np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))
    bad = norm <= eps
    safe = np.where(bad, 1.0, norm)
    y = np.where(bad, 0.0, v.data / safe).astype(v.dtype, copy=False)

    def rule(g):
        proj = np.sum(y * g, axis=axis, keepdims=True)
        return (np.where(bad, 0.0, (g - y * proj) / safe).astype(v.dtype, copy=False),)

    out = _make(y, (v,), rule, "l2_normalize")
    out.degenerate = np.squeeze(bad, axis=axis)
    return out


def squash(s: Tensor, axis: int = -1, eps: float = EPS_NORM) -> Tensor:
    """Capsule nonlinearity: keep direction, map the norm n to n^2 / (1 + n^2).

    Written as ``s * n / (1 + n^2)`` so the forward pass never divides by the
    norm; the zero vector maps to zero.
    """
    sq = np.sum(s.data * s.data, axis=axis, keepdims=True)
    n = np.sqrt(sq)
    scale = n / (1.0 + sq)
    out = s.data * scale

    def rule(g):
        # d/ds [f(n) s] = f(n) I + f'(n)/n * s s^T, with f(n) = n / (1 + n^2)
        tiny = n <= eps
        safe_n = np.where(tiny, 1.0, n)
        coeff = np.where(tiny, 0.0, (1.0 - sq) / ((1.0 + sq) ** 2 * safe_n))
        dot = np.sum(s.data * g, axis=axis, keepdims=True)
        return ((g * scale + coeff * dot * s.data).astype(s.dtype, copy=False),)

    return _make(out.astype(s.dtype, copy=False), (s,), rule, "squash")


# ----------------------------------------------------------------------
# convolution and batch normalization
# ----------------------------------------------------------------------
def _resolve_padding(padding, kh: int, kw: int) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (kh - 1) // 2, (kw - 1) // 2
    if isinstance(padding, int) and padding >= 0:
        return padding, padding
    if isinstance(padding, (tuple, list)) and len(padding) == 2:
        return int(padding[0]), int(padding[1])
    raise ContractError(f"unknown padding {padding!r}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding="valid",
           bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation, NCHW input and [K, C, kh, kw] kernel.

    Lowered to one tensor contraction over explicitly expanded patches.
    ``padding`` is ``"valid"``, ``"same"`` (pad (k-1)//2 per side) or an int.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if c != kc:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    ph, pw = _resolve_padding(padding, kh, kw)
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"conv2d kernel {kernel.shape} larger than padded input {x.shape}")
    ho = conv_output_size(h, kh, stride, ph)
    wo = conv_output_size(w, kw, stride, pw)
    if kh == kw == 1 and ph == pw == 0:
        return _pointwise_conv(x, kernel, stride, bias, ho, wo)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = windows[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # cols: [N, C, Ho, Wo, kh, kw] -> rows of patches [N*Ho*Wo, C*kh*kw]
    patches = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, c * kh * kw)
    out = patches @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2))

    def rule(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
        gk = (g2.T @ patches).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gp = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            hs = (ho - 1) * stride + 1
            ws = (wo - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gp[..., i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, rule, "conv2d")


def _pointwise_conv(x: Tensor, kernel: Tensor, stride: int, bias, ho: int, wo: int) -> Tensor:
    # 1x1 kernels need no patch expansion: a batched [K, C] @ [C, H*W] product
    n, c = x.shape[:2]
    k = kernel.shape[0]
    xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
    xs = xs.reshape(n, c, ho * wo)
    wmat = kernel.data.reshape(k, c)
    out = wmat @ xs
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, k, ho, wo)

    def rule(g):
        g3 = g.reshape(n, k, ho * wo)
        gk = np.tensordot(g3, xs, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gs = (wmat.T @ g3).reshape(n, c, ho, wo)
            if stride > 1:
                gx = np.zeros(x.shape, dtype=x.dtype)
                gx[:, :, ::stride, ::stride] = gs
            else:
                gx = gs
        grads = [gx, gk]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, rule, "conv2d")


class RunningStats:
    """Exponential moving averages of per-channel mean and variance."""

    def __init__(self, channels: int, momentum: float = 0.9, dtype=None):
        dtype = dtype or _DEFAULT_DTYPE
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        m = self.momentum
        self.mean = (m * self.mean + (1 - m) * mean).astype(self.mean.dtype)
        self.var = (m * self.var + (1 - m) * var).astype(self.var.dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
               running: RunningStats | None = None, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis except 1.

    In ``train`` mode the batch statistics are used and, if given, ``running``
    is updated in place.  ``eval`` mode uses ``running`` only.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0] or beta.shape != gamma.shape:
        raise ShapeError(f"batch_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    if mode == "train":
        if x.shape[0] < 2:
            raise ContractError("batch_norm in train mode needs at least 2 samples (degenerate batch)")
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        if running is not None:
            running.update(mu.reshape(-1), var.reshape(-1))
    elif mode == "eval":
        if running is None:
            raise ContractError("batch_norm eval mode needs running statistics")
        mu = running.mean.reshape(bshape).astype(x.dtype)
        var = running.var.reshape(bshape).astype(x.dtype)
    else:
        raise ContractError(f"unknown batch_norm mode {mode!r}")

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = (gb * xhat + bb).astype(x.dtype, copy=False)

    def rule(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gb
        if mode == "train":
            dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            dx = dxhat * inv
        return dx.astype(x.dtype, copy=False), dgamma, dbeta

    return _make(out, (x, gamma, beta), rule, "batch_norm")
