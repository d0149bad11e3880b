"""Binary model file.

Layout (little-endian)::

    "AFSM"            4 bytes magic
    version           u16
    meta length       u32, followed by that many bytes of UTF-8 JSON
    tensor count      u32
    per tensor        u16 name length, name, u8 ndim, ndim x u32 dims
    payload           float32 values of every tensor, C order, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AFSM"
VERSION = 1


class ModelFileError(ValueError):
    pass


class CorruptModelFile(ModelFileError):
    pass


class UnsupportedModelVersion(ModelFileError):
    pass


class ModelShapeMismatch(ModelFileError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None, version: int = VERSION) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", version, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptModelFile(f"model file truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CorruptModelFile("not a model file (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise UnsupportedModelVersion(f"model file version {version} is not supported (expected {VERSION})")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelFile(f"unreadable metadata: {exc}") from None
    (count,) = r.unpack("<I")
    header = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        header.append((name, shape))
    tensors = {}
    for name, shape in header:
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CorruptModelFile(f"{len(buf) - r.pos} trailing bytes after payload")
    return tensors, meta


def save_model(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load_model(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def check_shapes(tensors: dict[str, np.ndarray], expected: dict[str, tuple[int, ...]]) -> None:
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ModelShapeMismatch(f"tensor names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ModelShapeMismatch(f"{name}: file has {tensors[name].shape}, model expects {shape}")
