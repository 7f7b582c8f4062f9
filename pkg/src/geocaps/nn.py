"""Parameter containers and the three layer types the network is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import RunningStats, Tensor


class Module:
    """Holds parameters, running statistics and named sub-modules.

    Sub-modules registered through :meth:`add_module` are walked in
    registration order; a module reachable under two names is reported once,
    under the first.
    """

    def __init__(self):
        self._modules: dict[str, Module] = {}
        self._params: dict[str, Tensor] = {}
        self._stats: dict[str, RunningStats] = {}

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def add_parameter(self, name: str, value: Tensor) -> Tensor:
        value.name = name
        self._params[name] = value
        return value

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Tensor]]:
        seen = set() if _seen is None else _seen
        for name, p in self._params.items():
            if id(p) not in seen:
                seen.add(id(p))
                yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_stats(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, RunningStats]]:
        seen = set() if _seen is None else _seen
        for name, s in self._stats.items():
            if id(s) not in seen:
                seen.add(id(s))
                yield prefix + name, s
        for name, m in self._modules.items():
            yield from m.named_stats(prefix + name + ".", seen)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters followed by running statistics, in a stable order."""
        state = {name: p.data for name, p in self.named_parameters()}
        for name, s in self.named_stats():
            state[name + ".running_mean"] = s.mean
            state[name + ".running_var"] = s.var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in self.named_parameters():
            _assign(p.data, state[name], name)
        for name, s in self.named_stats():
            _assign(s.mean, state[name + ".running_mean"], name)
            _assign(s.var, state[name + ".running_var"], name)


def _assign(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != np.shape(src):
        raise ValueError(f"{name}: shape {np.shape(src)} does not match {dst.shape}")
    dst[...] = src


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype or T.default_dtype())


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding="same",
                 bias: bool = False, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel, self.stride, self.padding = in_ch, out_ch, kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = self.add_parameter("weight", T.parameter(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in)))
        self.bias = self.add_parameter("bias", T.parameter(np.zeros(out_ch, dtype=T.default_dtype()))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.stride, self.padding, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        dtype = T.default_dtype()
        self.gamma = self.add_parameter("gamma", T.parameter(np.ones(channels, dtype=dtype)))
        self.beta = self.add_parameter("beta", T.parameter(np.zeros(channels, dtype=dtype)))
        self.running = RunningStats(channels, momentum, dtype)
        self._stats["bn"] = self.running
        self.eps = eps

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, mode, self.running, self.eps)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = self.add_parameter("weight", T.parameter(he_normal(rng, (in_dim, out_dim), in_dim)))
        self.bias = self.add_parameter("bias", T.parameter(np.zeros(out_dim, dtype=T.default_dtype())))

    def __call__(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)
