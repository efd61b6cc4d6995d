"""Self-contained MCLE tensor serialization.

Layout (all integers little-endian):
    magic 'MCLE' | u32 version=1 | u32 dtype (0=f32, 1=f64) | u32 ndim
    | ndim x u64 dims | row-major payload
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MCLE"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def mcle_bytes(array: np.ndarray) -> bytes:
    """Serialize a float array; non-f32 input is widened to f64."""
    arr = np.asarray(array)
    dtype = np.dtype("<f4") if arr.dtype == np.float32 else np.dtype("<f8")
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"invalid dims {arr.shape}")
    header = MAGIC + struct.pack("<III", VERSION, _DTYPE_CODES[dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def _read_exact(source, n: int, what: str) -> bytes:
    chunk = source.read(n)
    if len(chunk) != n:
        raise ValueError(f"truncated {what}: wanted {n} bytes, got {len(chunk)}")
    return chunk


def read_mcle(source) -> np.ndarray:
    """Parse one record from a binary stream."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    version, code, ndim = struct.unpack("<III", _read_exact(source, 12, "header"))
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown dtype code {code}")
    if ndim < 1:
        raise ValueError("ndim must be >= 1")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(source, 8 * ndim, "dims"))
    if any(d < 1 for d in dims):
        raise ValueError(f"invalid dims {dims}")
    dtype = _CODE_DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    payload = _read_exact(source, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def read_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_mcle(fh)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after record")
    return arr


def write_file(path, array: np.ndarray) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    data = mcle_bytes(array)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with io.open(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
