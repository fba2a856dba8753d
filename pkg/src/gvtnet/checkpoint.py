"""Binary checkpoint files.

Layout, all integers little-endian u32, all floats little-endian f8:

    magic "GVTN" | version | config-length | config JSON (canonical,
    sorted keys) | record-count | records...

    record := name-length | name UTF-8 | rank | extent * rank | data

Model parameters are stored under their dotted tree names; callers may
append extra records (optimizer moments, step counters) under any names
that do not collide.  Writes go to a temp file in the target directory
followed by an atomic rename, so a crash never leaves a torn file.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .model import GVTNet, NetConfig

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint",
           "read_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"GVTN"
VERSION = 1


class CheckpointError(ValueError):
    """File is not a readable checkpoint, or disagrees with the model."""


def _pack_u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _encode_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    parts = [_pack_u32(len(nb)), nb, _pack_u32(arr.ndim)]
    parts += [_pack_u32(e) for e in arr.shape]
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path: str, model: GVTNet,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    records = [(name, p.data) for name, p in model.named_parameters()]
    if extra:
        for name in sorted(extra):
            records.append((name, np.asarray(extra[name], dtype=np.float64)))
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")

    blob = [MAGIC, _pack_u32(VERSION), _pack_u32(len(cfg_json)), cfg_json,
            _pack_u32(len(records))]
    blob += [_encode_record(name, arr) for name, arr in records]

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(b"".join(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path: str) -> tuple[NetConfig, dict[str, np.ndarray]]:
    """Parse a checkpoint into its config and raw named arrays."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}")
    cfg = NetConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    records: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        records[name] = arr.astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return cfg, records


def load_checkpoint(path: str) -> tuple[GVTNet, dict[str, np.ndarray]]:
    """Rebuild the model; leftover (non-parameter) records are returned."""
    cfg, records = read_checkpoint(path)
    model = GVTNet(cfg)
    for name, p in model.named_parameters():
        if name not in records:
            raise CheckpointError(f"{path}: missing parameter {name}")
        arr = records.pop(name)
        if arr.shape != p.shape:
            raise CheckpointError(
                f"{path}: parameter {name} has extents {arr.shape}, "
                f"model expects {p.shape}")
        p.data = arr.copy()
    return model, records
