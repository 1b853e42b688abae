"""Binary tensor container (HTK1).

Layout: magic ``HTK1``, u8 dtype code (0 = float64), u32 little-endian
number of dimensions, that many u64 little-endian dimension lengths, then
the row-major little-endian float64 payload.
"""

from __future__ import annotations

import struct
from math import prod
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError

MAGIC = b"HTK1"
DTYPE_FLOAT64 = 0


def to_bytes(tensor: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(tensor, dtype=np.float64)
    header = MAGIC + struct.pack("<BI", DTYPE_FLOAT64, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + arr.astype("<f8").tobytes(order="C")


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 9 or buf[:4] != MAGIC:
        raise ContainerFormatError("not an HTK1 container (bad magic)")
    dtype_code, ndim = struct.unpack_from("<BI", buf, 4)
    if dtype_code != DTYPE_FLOAT64:
        raise ContainerFormatError(f"unsupported dtype code {dtype_code}")
    offset = 9
    if len(buf) < offset + 8 * ndim:
        raise ContainerFormatError("truncated dimension header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = prod(dims) if ndim else 1
    payload = buf[offset:]
    if len(payload) != 8 * count:
        raise ContainerFormatError(
            f"payload holds {len(payload) // 8} values, dims {dims} need {count}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return data.reshape(dims)


def write_htk(path, tensor: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(tensor))


def read_htk(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())
