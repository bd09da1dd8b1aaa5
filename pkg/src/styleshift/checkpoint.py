"""Binary checkpoint container.

Layout (little-endian): magic ``STSH``, u32 version, kind string, config
snapshot string, u32 tensor count followed by (name, u8 dtype code, u32 ndim,
u32 dims..., f32 payload) entries, then the vocabulary and the label list as
u32-counted lists of strings.  Strings are u32 byte length + UTF-8.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"STSH"
VERSION = 1
_F32 = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, mismatched or otherwise invalid checkpoint."""


@dataclass
class Checkpoint:
    kind: str
    tensors: dict
    vocab: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _config_text(config: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.items())


def _parse_config_text(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(ckpt.kind), _pack_str(_config_text(ckpt.config)),
             struct.pack("<I", len(ckpt.tensors))]
    for name, value in ckpt.tensors.items():
        arr = np.asarray(value, dtype="<f4", order="C")
        parts += [_pack_str(name), struct.pack("<BI", _F32, arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
                  arr.tobytes()]
    for items in (ckpt.vocab, ckpt.labels):
        parts.append(struct.pack("<I", len(items)))
        parts += [_pack_str(s) for s in items]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.path}: invalid UTF-8 at offset {self.pos}") from exc


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    """Read a checkpoint; with ``kind`` given, any other kind is rejected."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    found = r.string()
    if kind is not None and found != kind:
        raise CheckpointError(f"{path}: checkpoint holds a {found!r}, expected a {kind!r}")
    config = _parse_config_text(r.string())
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        code, ndim = struct.unpack("<BI", r.take(5))
        if code != _F32:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float64)
    vocab = [r.string() for _ in range(r.u32())]
    labels = [r.string() for _ in range(r.u32())]
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(found, tensors, vocab, labels, config)


def expect_shape(name: str, value: np.ndarray, shape: tuple) -> np.ndarray:
    if value.shape != tuple(shape):
        raise CheckpointError(f"tensor {name!r}: stored shape {value.shape}, expected {tuple(shape)}")
    return value
