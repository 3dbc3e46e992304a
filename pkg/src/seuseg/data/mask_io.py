"""Binary masks as 8-bit PGM (P5) files: background 0, foreground 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError

_WS = b" \t\n\r\v\f"


def encode_pgm(mask) -> bytes:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise DataError("mask must be binary (0/1)")
    h, w = m.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + (m.astype(np.uint8) * 255).tobytes()


def _token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data) and (data[pos] in _WS or data[pos:pos + 1] == b"#"):
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            pos += 1
    start = pos
    while pos < len(data) and data[pos] not in _WS:
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PGM header", start)
    return data[start:pos], pos


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 file and return a ``uint8`` 0/1 mask (pixels >= half of maxval are foreground)."""
    if data[:2] != b"P5":
        raise FormatError(f"not a binary PGM: magic {data[:2]!r}", 0)
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        tok, new = _token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"PGM {what} is not a decimal integer: {tok[:16]!r}", new - len(tok))
        fields.append(int(tok))
        pos = new
    w, h, maxval = fields
    if w < 1 or h < 1 or not 1 <= maxval <= 255:
        raise FormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}", pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after PGM maxval", pos)
    pos += 1
    if len(data) - pos != w * h:
        raise FormatError(f"PGM raster holds {len(data) - pos} bytes, expected {w * h}", pos)
    pix = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w)
    return (pix.astype(np.int32) * 2 >= maxval + 1).astype(np.uint8)


def write_pgm(path, mask) -> None:
    Path(path).write_bytes(encode_pgm(mask))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())
