"""Reader/writer for the ``.hpt`` binary tensor format.

Layout (all little-endian)::

    b"HPT1"            magic
    u8 dtype           0x00 = float32 (only code accepted)
    u8 ndim
    u8 u8              reserved, zero
    u32 * ndim         dimensions
    f32 * prod(dims)   row-major payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"HPT1"
DTYPE_F32 = 0x00

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 255:
        raise FormatError("too many dimensions for .hpt")
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to serialize non-finite values")
    header = MAGIC + struct.pack("<BBBB", DTYPE_F32, arr.ndim, 0, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + dims + payload


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError("bad magic, not an .hpt tensor")
    dtype, ndim, r0, r1 = struct.unpack_from("<BBBB", blob, 4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype:#04x}")
    if r0 or r1:
        raise FormatError("reserved header bytes must be zero")
    offset = 8 + 4 * ndim
    if len(blob) < offset:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) != offset + 4 * count:
        raise FormatError(f"payload size mismatch for shape {shape}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float32).reshape(shape)


def save(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())
