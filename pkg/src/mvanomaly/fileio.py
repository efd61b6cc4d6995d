"""Atomic file writes and the binary PPM/PGM image formats."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ppm_bytes(rgb: np.ndarray) -> bytes:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected H x W x 3 uint8")
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    atomic_write_bytes(path, ppm_bytes(rgb))


def pgm_bytes(gray: np.ndarray) -> bytes:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("expected H x W uint8")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + gray.tobytes()


def write_pgm(path, gray: np.ndarray) -> None:
    atomic_write_bytes(path, pgm_bytes(gray))


def _read_pnm_header(data: bytes, magic: bytes):
    # header tokens may be separated by any whitespace and '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    return w, h, i + 1  # payload starts after one whitespace byte


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, off = _read_pnm_header(data, b"P6")
    pix = np.frombuffer(data[off : off + w * h * 3], dtype=np.uint8)
    if pix.size != w * h * 3:
        raise ValueError("truncated PPM payload")
    return pix.reshape(h, w, 3).copy()


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, off = _read_pnm_header(data, b"P5")
    pix = np.frombuffer(data[off : off + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError("truncated PGM payload")
    return pix.reshape(h, w).copy()


def heat_ramp() -> np.ndarray:
    """Fixed 256-entry color ramp (dark blue -> magenta -> yellow)."""
    t = np.arange(256, dtype=np.float64) / 255.0
    r = np.round(255.0 * np.clip(2.0 * t, 0.0, 1.0))
    g = np.round(255.0 * np.clip(2.0 * t - 1.0, 0.0, 1.0))
    b = np.round(255.0 * (1.0 - t))
    return np.stack([r, g, b], axis=1).astype(np.uint8)


def heatmap_rgb(values: np.ndarray) -> np.ndarray:
    """Map a [0,1] float map through the fixed ramp."""
    ramp = heat_ramp()
    idx = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255)
    return ramp[idx.astype(np.intp)]
