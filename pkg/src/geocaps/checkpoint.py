"""Binary checkpoint container.

Layout, all integers little-endian u32 unless noted::

    b"GCAP"                       magic
    version                       currently 1
    digest[32]                    SHA-256 of the canonical model-config JSON
    meta_len, meta[meta_len]      UTF-8 JSON: run config, epochs done, optimizer step
    n_tensors
    n_tensors x:
        name_len, name[name_len]  UTF-8
        rank, dims[rank]
        values                    float32 little-endian, prod(dims) of them
    crc32                         zlib CRC-32 of every preceding byte

Tensor order is part of the format (model parameters, running statistics,
then optional optimizer moments), so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError

MAGIC = b"GCAP"
VERSION = 1
_U32 = struct.Struct("<I")


class DigestMismatch(CheckpointError, ConfigError):
    """Checkpoint was written for a different model configuration."""


@dataclass
class Checkpoint:
    digest: bytes
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def model_state(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("optim.")}

    def optimizer_state(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        m = {k[len("optim.m."):]: v for k, v in self.tensors.items() if k.startswith("optim.m.")}
        v = {k[len("optim.v."):]: v for k, v in self.tensors.items() if k.startswith("optim.v.")}
        return m, v


def encode(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != 32:
        raise CheckpointError("digest must be 32 bytes")
    parts = [MAGIC, _U32.pack(VERSION), ckpt.digest]
    meta = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [_U32.pack(len(meta)), meta, _U32.pack(len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CheckpointError(f"corrupt checkpoint: truncated while reading {what} "
                                  f"(need {n} bytes at offset {self.pos}, file has {len(self.buf)})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic (not a GCAP file)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(32, "digest")
    try:
        meta = json.loads(r.take(r.u32("meta length"), "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint: unreadable metadata") from exc
    tensors = {}
    for i in range(r.u32("tensor count")):
        try:
            name = r.take(r.u32("name length"), f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint: tensor {i} name is not UTF-8") from exc
        rank = r.u32(f"{name} rank")
        if rank > 8:
            raise CheckpointError(f"corrupt checkpoint: {name} has implausible rank {rank}")
        dims = tuple(r.u32(f"{name} dims") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = r.take(4 * count, f"{name} values")
        tensors[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(dims)
    body_end = r.pos
    stored = r.u32("checksum")
    if r.pos != len(buf):
        raise CheckpointError(f"corrupt checkpoint: {len(buf) - r.pos} trailing bytes after checksum")
    if zlib.crc32(buf[:body_end]) & 0xFFFFFFFF != stored:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")
    return Checkpoint(digest, meta, tensors)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    os.replace(tmp, path)


def read_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError:
        raise
    return decode(buf)


def snapshot(model, digest: bytes, meta: dict, optimizer=None) -> Checkpoint:
    """Checkpoint of a model's state (and optionally an :class:`~geocaps.train.Adam`'s moments)."""
    tensors = dict(model.state_dict())
    meta = dict(meta)
    if optimizer is not None:
        meta["optimizer_step"] = optimizer.state.step
        for name in optimizer.params:
            if name in optimizer.state.m:
                tensors[f"optim.m.{name}"] = optimizer.state.m[name]
                tensors[f"optim.v.{name}"] = optimizer.state.v[name]
    return Checkpoint(digest, meta, {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()})


def restore(model, ckpt: Checkpoint, digest: bytes, optimizer=None) -> None:
    """Load parameters into ``model``; refuses checkpoints written for another configuration."""
    if ckpt.digest != digest:
        raise DigestMismatch(
            f"checkpoint model digest {ckpt.digest.hex()[:16]} does not match configuration {digest.hex()[:16]}")
    try:
        model.load_state_dict(ckpt.model_state())
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit the model: {exc}") from exc
    if optimizer is not None:
        m, v = ckpt.optimizer_state()
        optimizer.state.step = int(ckpt.meta.get("optimizer_step", 0))
        optimizer.state.m = {k: a.astype(optimizer.params[k].dtype).copy() for k, a in m.items()}
        optimizer.state.v = {k: a.astype(optimizer.params[k].dtype).copy() for k, a in v.items()}
