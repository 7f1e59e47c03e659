"""LMAT binary matrix files.

Layout: magic ``b"LMAT1\\0"``, rows and cols as little-endian u32, then
``rows * cols`` little-endian float64 values in row-major order. Nothing may
follow the payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LMAT1\x00"
_HEADER = struct.Struct("<II")
HEADER_SIZE = len(MAGIC) + _HEADER.size


def encode(mat: np.ndarray) -> bytes:
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise FormatError(f"LMAT stores 2-D matrices, got shape {mat.shape}")
    rows, cols = mat.shape
    if rows >= 2**32 or cols >= 2**32:
        raise FormatError(f"dimensions {mat.shape} do not fit in u32")
    payload = np.ascontiguousarray(mat, dtype="<f8").tobytes()
    return MAGIC + _HEADER.pack(rows, cols) + payload


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER_SIZE or buf[: len(MAGIC)] != MAGIC:
        raise FormatError("not an LMAT file (bad magic or truncated header)")
    rows, cols = _HEADER.unpack_from(buf, len(MAGIC))
    expected = 8 * rows * cols
    got = len(buf) - HEADER_SIZE
    if got < expected:
        raise FormatError(f"payload truncated: expected {expected} bytes, found {got}")
    if got > expected:
        raise FormatError(f"{got - expected} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=HEADER_SIZE)
    return data.astype(np.float64).reshape(rows, cols)


def write(path: str | Path, mat: np.ndarray) -> None:
    Path(path).write_bytes(encode(mat))


def read(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())
