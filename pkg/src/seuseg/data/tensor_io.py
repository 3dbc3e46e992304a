"""Portable named-tensor container.

Layout (all integers little-endian)::

    b"SEUT"  u32 version  u32 count
    count x ( u16 name_len, name (UTF-8), u8 rank, rank x u64 extent, prod(extents) x f64 )
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"SEUT"
VERSION = 1
HEADER = struct.Struct("<4sII")


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long ({len(raw)} bytes): {name[:40]!r}...")
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: needed {n} bytes for {what}, {len(self.data) - self.pos} left",
                              self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    (count,) = r.unpack("<I", "entry count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", f"entry {i} name length")
        try:
            name = r.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"entry {i} name is not valid UTF-8", start + 2) from None
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}Q", f"extents of {name!r}")
        n = int(np.prod(shape, dtype=object)) if rank else 1
        payload = r.take(8 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last entry", r.pos)
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())
