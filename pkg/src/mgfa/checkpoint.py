"""Little-endian binary checkpoint.

Layout: magic ``MGFA`` | u32 version | u32 epoch | 16-byte RNG state |
u32 tensor count | per tensor: u16 name length, name, u8 ndim, u32 dims,
f64 data.  Architecture and blend weights travel as ``meta.*`` tensors.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .attention import BlendWeights
from .model import BackboneConfig, Model
from .train import TrainState

MAGIC = b"MGFA"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    version: int = VERSION
    epoch: int = 0
    rng_state: int = 0
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<II", self.version, self.epoch),
               self.rng_state.to_bytes(16, "little"), struct.pack("<I", len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f8")
            out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr).tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
        pos = 4

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(buf):
                raise TruncatedCheckpointError(f"checkpoint truncated at byte {pos} (needed {n} more)")
            chunk = buf[pos:pos + n]
            pos += n
            return chunk

        (version,) = struct.unpack("<I", take(4))
        if version != VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, this build reads {VERSION}")
        (epoch,) = struct.unpack("<I", take(4))
        rng_state = int.from_bytes(take(16), "little")
        (count,) = struct.unpack("<I", take(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = take(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
            size = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
            tensors[name] = data
        if pos != len(buf):
            raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
        return cls(version, epoch, rng_state, tensors)


def pack(model: Model, state: TrainState | None = None) -> Checkpoint:
    state = state or TrainState()
    cfg = model.config
    b = model.blend
    tensors = {
        "meta.backbone": np.array([cfg.input_size, cfg.num_classes, cfg.hook, cfg.in_channels, int(cfg.norm),
                                   *cfg.pools], float),
        "meta.blend": np.array([b.alpha, b.beta, b.gamma]),
    }
    for name, p in model.named_parameters():
        tensors[name] = p.data
    for name, _ in model.named_parameters():
        if name in state.velocity:
            tensors[f"momentum.{name}"] = state.velocity[name]
    return Checkpoint(VERSION, state.epoch, state.rng_state, tensors)


def unpack(ckpt: Checkpoint) -> tuple[Model, TrainState]:
    t = ckpt.tensors
    try:
        meta = t["meta.backbone"].astype(int).tolist()
        input_size, num_classes, hook, in_channels, norm, *pools = meta
        n = len(pools)
        channels = tuple(t[f"stage{i}.weight"].shape[0] for i in range(n))
        kernel = t["stage0.weight"].shape[2]
        cfg = BackboneConfig(channels, kernel, tuple(pools), hook, input_size, num_classes, in_channels, bool(norm))
        model = Model.init(cfg)
        for name, p in model.named_parameters():
            if t[name].shape != p.shape:
                raise CheckpointError(f"tensor {name} has shape {t[name].shape}, expected {p.shape}")
            p.data = t[name].copy()
        model.blend = BlendWeights(*t["meta.blend"].tolist())
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor {exc}") from None
    velocity = {k[len("momentum."):]: v.copy() for k, v in t.items() if k.startswith("momentum.")}
    return model, TrainState(ckpt.epoch, ckpt.rng_state, velocity)


def save_checkpoint(model: Model, state: TrainState | None, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(pack(model, state).to_bytes())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        return Checkpoint.from_bytes(f.read())


def load_model(path: str | os.PathLike) -> tuple[Model, TrainState]:
    return unpack(load_checkpoint(path))
