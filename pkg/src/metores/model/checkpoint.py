"""Binary checkpoint container.

Layout (little endian)::

    b"MRCKPT1\\n"
    u32 header length, header bytes (UTF-8 key=value lines: model config,
        plus free-form metadata such as the vocabulary digest)
    u32 tensor count
    per tensor: u16 name length, name, u8 ndim, u32 dims..., float32 data (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .params import ModelConfig, ModelParams

MAGIC = b"MRCKPT1\n"


class CheckpointError(Exception):
    pass


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict[str, str] | None = None) -> None:
    header = params.config.to_text()
    for k, v in sorted((meta or {}).items()):
        header += f"meta.{k}={v}\n"
    hb = header.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hb)), hb, struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict[str, str]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    header = take(hlen).decode("utf-8")
    config = ModelConfig.from_text(header)
    meta = {}
    for line in header.splitlines():
        if line.startswith("meta."):
            k, _, v = line[5:].partition("=")
            meta[k] = v
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return ModelParams(config, tensors), meta
