"""PrimaryCaps and GeoCaps layers: squash, prediction vectors and routing by agreement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor, squash


@dataclass
class CapsuleConfig:
    n_primary: int = 32
    d_primary: int = 8
    primary_kernel: tuple[int, int] = (3, 3)
    primary_stride: int = 1
    n_out: int = 32
    d_out: int = 64
    routing_iterations: int = 4
    weight_sharing: str = "per_pair"

    def __post_init__(self):
        k = self.primary_kernel
        self.primary_kernel = (int(k), int(k)) if isinstance(k, int) else tuple(int(v) for v in k)

    def validate(self) -> None:
        for name in ("n_primary", "d_primary", "primary_stride", "n_out", "d_out", "routing_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"capsules.{name} must be >= 1")
        if self.primary_kernel[0] != self.primary_kernel[1]:
            raise ConfigError("primary capsule kernels must be square")
        if self.weight_sharing != "per_pair":
            raise ConfigError(f"unsupported weight_sharing {self.weight_sharing!r}")

    @property
    def code_length(self) -> int:
        return self.n_out * self.d_out


@dataclass
class RoutingState:
    """Final routing logits and couplings, plus the couplings of every iteration."""
    logits: np.ndarray
    couplings: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)


class PrimaryCaps(Module):
    """Convolution producing ``n_primary`` capsule types of dimension ``d_primary``.

    Output channel ``t * d_primary + k`` is component ``k`` of capsule type ``t``.
    """

    def __init__(self, in_channels: int, config: CapsuleConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.conv = self.add_module("conv", Conv2d(
            in_channels, config.n_primary * config.d_primary, config.primary_kernel[0],
            config.primary_stride, "valid", bias=True, rng=rng))

    def grid(self, h: int, w: int) -> tuple[int, int]:
        k, s = self.config.primary_kernel[0], self.config.primary_stride
        return T.conv_output_size(h, k, s, 0), T.conv_output_size(w, k, s, 0)

    def __call__(self, features: Tensor) -> Tensor:
        """[N, C, h, w] feature map -> [N, h'*w'*n_primary, d_primary] squashed pose vectors."""
        k = self.config.primary_kernel[0]
        if features.ndim != 4 or features.shape[2] < k or features.shape[3] < k:
            raise ShapeError(f"feature map {features.shape} is smaller than the {k}x{k} primary kernel")
        n = features.shape[0]
        cfg = self.config
        x = self.conv(features)
        _, _, hp, wp = x.shape
        x = T.reshape(x, (n, cfg.n_primary, cfg.d_primary, hp, wp))
        x = T.transpose(x, (0, 3, 4, 1, 2))
        x = T.reshape(x, (n, hp * wp * cfg.n_primary, cfg.d_primary))
        return squash(x)


def predict_vectors(u: Tensor, weights: Tensor) -> Tensor:
    """Prediction vectors ``u_hat[n, i, j] = u[n, i] @ W[i, j]``.

    ``u`` is [N, G_in, d_in] and ``weights`` is [G_in, n_out, d_in, d_out];
    the result is [N, G_in, n_out, d_out].
    """
    if u.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"predict_vectors: expected u [N,G,d] and W [G,J,d_in,d_out], got {u.shape}, {weights.shape}")
    n, g, d = u.shape
    gw, j, d_in, d_out = weights.shape
    if g != gw or d != d_in:
        raise ShapeError(f"predict_vectors: u has G_in={g}, d={d} but W has G_in={gw}, d_in={d_in} (n_out={j})")
    x = T.reshape(u, (n, g, 1, 1, d))
    out = T.matmul(x, weights)
    return T.reshape(out, (n, g, j, d_out))


def dynamic_routing(u_hat: Tensor, iterations: int) -> tuple[Tensor, RoutingState]:
    """Routing by agreement over prediction vectors ``u_hat`` [N, G_in, n_out, d].

    Logits start at zero on every call; couplings are a softmax over output
    capsules, and after each non-final round the logits grow by the agreement
    ``u_hat . v``.  Every step stays on the graph, so gradients flow through
    the couplings as well.  Returns output capsules [N, n_out, d].
    """
    if iterations < 1:
        raise ContractError(f"routing needs at least one iteration, got {iterations}")
    if u_hat.ndim != 4:
        raise ShapeError(f"u_hat must be [N, G_in, n_out, d], got {u_hat.shape}")
    n, g, j, d = u_hat.shape
    logits = Tensor(np.zeros((n, g, j), dtype=u_hat.dtype))
    history = []
    for r in range(iterations):
        c = T.softmax(logits, axis=2)
        history.append(c.data)
        s = T.sum_(T.mul(T.reshape(c, (n, g, j, 1)), u_hat), axis=1)
        v = squash(s)
        if r < iterations - 1:
            agreement = T.sum_(T.mul(u_hat, T.reshape(v, (n, 1, j, d))), axis=3)
            logits = T.add(logits, agreement)
    return v, RoutingState(logits=logits.data, couplings=c.data, history=history)


def descriptor_from_caps(v: Tensor) -> Tensor:
    """Flatten GeoCaps outputs capsule-major and scale to unit length.

    The result's ``degenerate`` attribute flags all-zero inputs.
    """
    n = v.shape[0]
    return T.l2_normalize(T.reshape(v, (n, -1)), axis=1)


class GeoCaps(Module):
    def __init__(self, n_in: int, config: CapsuleConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        w = rng.standard_normal((n_in, config.n_out, config.d_primary, config.d_out)) * 0.05
        self.weight = self.add_parameter("weight", T.parameter(w.astype(T.default_dtype())))

    def __call__(self, u: Tensor) -> tuple[Tensor, RoutingState]:
        return dynamic_routing(predict_vectors(u, self.weight), self.config.routing_iterations)


class CapsuleHead(Module):
    """PrimaryCaps -> GeoCaps -> unit-length descriptor."""

    def __init__(self, in_channels: int, feature_hw: tuple[int, int], config: CapsuleConfig,
                 rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        self.primary = self.add_module("primary", PrimaryCaps(in_channels, config, rng))
        hp, wp = self.primary.grid(*feature_hw)
        if hp < 1 or wp < 1:
            raise ConfigError(f"feature map {feature_hw} is smaller than the primary kernel {config.primary_kernel}")
        self.n_in = hp * wp * config.n_primary
        self.geo = self.add_module("geo", GeoCaps(self.n_in, config, rng))
        self.last_routing: RoutingState | None = None

    def capsules(self, features: Tensor) -> Tensor:
        u = self.primary(features)
        v, state = self.geo(u)
        self.last_routing = state
        return v

    def __call__(self, features: Tensor, mode: str = "train") -> Tensor:
        return descriptor_from_caps(self.capsules(features))
