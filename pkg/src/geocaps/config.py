"""JSON run configuration with strict parsing.

A run file may set any subset of fields; everything else keeps its default.
Unknown keys are rejected.  ``model.preset`` picks the base the model fields
override: ``"desk"`` (default, CPU-trainable in minutes) or ``"full"`` (the
224x224 network with 2048-d descriptors).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .backbone import BackboneConfig
from .capsules import CapsuleConfig
from .data import SyntheticSpec
from .errors import ConfigError
from .model import ModelConfig
from .objective import LossConfig
from .train import TrainConfig


def desk_model_config(**overrides) -> ModelConfig:
    """Small two-branch network for 64x64 inputs.

    Width 1/8 of the full channel counts and one bottleneck per stage leave a
    2x2 feature map, so PrimaryCaps uses a 1x1 kernel there.
    """
    cfg = ModelConfig(
        variant="II",
        head="caps",
        backbone=BackboneConfig(input_size=(64, 64), block_counts=(1, 1, 1, 1), width_scale=Fraction(1, 8)),
        capsules=CapsuleConfig(n_primary=8, d_primary=8, primary_kernel=(1, 1), n_out=16, d_out=8,
                               routing_iterations=4),
        fc_dim=128,
        seed=0,
    )
    return dataclasses.replace(cfg, **overrides)


def full_model_config(**overrides) -> ModelConfig:
    return dataclasses.replace(ModelConfig(), **overrides)


PRESETS = {"desk": desk_model_config, "full": full_model_config}


@dataclass
class DataConfig:
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    directory: str | None = None
    train_fraction: float = 0.8

    def validate(self) -> None:
        if (self.synthetic is None) == (self.directory is None):
            raise ConfigError("data needs exactly one of 'synthetic' or 'directory'")
        if self.synthetic is not None:
            self.synthetic.validate()
        if not 0 < self.train_fraction < 1:
            raise ConfigError("data.train_fraction must be in (0, 1)")


@dataclass
class EvalConfig:
    k_list: tuple[int, ...] = (1, 5, 10, 20, 50, 80)
    percent_list: tuple[float, ...] = (1.0, 10.0)

    def validate(self) -> None:
        if any(k < 1 for k in self.k_list):
            raise ConfigError("eval.k_list entries must be >= 1")
        if any(not 0 < p <= 100 for p in self.percent_list):
            raise ConfigError("eval.percent_list entries must be in (0, 100]")


@dataclass
class OutputConfig:
    loss_log: str | None = None  # defaults to <checkpoint>.loss.csv


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=desk_model_config)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.loss.validate()
        self.data.validate()
        self.eval.validate()
        if self.data.synthetic is not None:
            size = self.data.synthetic.image_size
            if tuple(self.model.backbone.input_size) != (size, size):
                raise ConfigError(f"synthetic image_size {size} does not match model input "
                                  f"{tuple(self.model.backbone.input_size)}")


# ----------------------------------------------------------------------
# strict merging of JSON objects into dataclasses
# ----------------------------------------------------------------------
def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if hint is Fraction:
        try:
            return Fraction(value) if not isinstance(value, float) else Fraction(value).limit_denominator(1 << 16)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            raise ConfigError(f"{path}: cannot read {value!r} as a ratio") from exc
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(hint):
        return merge(hint(), value, path)
    return value


def merge(base, data, path: str = "config"):
    """Return a copy of dataclass ``base`` with the fields in ``data`` overridden (strictly)."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(type(base))
    names = [f.name for f in dataclasses.fields(base)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    updates = {}
    for name, value in data.items():
        sub = f"{path}.{name}"
        current = getattr(base, name)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            updates[name] = merge(current, value, sub)
        else:
            updates[name] = _coerce(value, hints[name], sub)
    return dataclasses.replace(base, **updates)


def parse_run_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run configuration must be a JSON object")
    data = dict(data)
    model = data.pop("model", {})
    if not isinstance(model, dict):
        raise ConfigError("config.model: expected an object")
    model = dict(model)
    preset = model.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"config.model.preset must be one of {sorted(PRESETS)}, got {preset!r}")
    base = RunConfig(model=PRESETS[preset]())
    section = data.get("data")
    if isinstance(section, dict) and "directory" in section and "synthetic" not in section:
        base.data.synthetic = None
    cfg = merge(base, data)
    cfg.model = merge(cfg.model, model, "config.model")
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return parse_run_config(data)


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def model_digest(model: ModelConfig) -> bytes:
    """SHA-256 of the canonical JSON form of a model configuration."""
    return hashlib.sha256(canonical_json(model).encode("utf-8")).digest()
