"""Dense tensor container, MCLE serialization, and embedding providers.

MCLE layout (all integers little-endian):
    magic 'MCLE' | u32 version=1 | u32 dtype (0=f32, 1=f64) | u32 ndim
    | ndim x u64 dims | row-major payload
"""

from __future__ import annotations

import io
import re
import struct
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MCLE"
VERSION = 1
_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
# largest payload we will address, in bytes
_MAX_BYTES = 2**63 - 1


class McleError(ValueError):
    pass


class BadMagic(McleError):
    pass


class UnsupportedVersion(McleError):
    pass


class TruncatedPayload(McleError):
    pass


class DimOverflow(McleError):
    pass


class MissingEmbedding(McleError):
    pass


class MalformedBody(McleError):
    pass


class TransportError(RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class InvariantViolation(McleError):
    pass


@dataclass(frozen=True)
class EmbeddingTensor:
    """N-dimensional dense float tensor; dims >= 1 elementwise, ndim >= 1."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype == np.float32:
            arr = np.ascontiguousarray(arr, dtype="<f4")
        else:
            arr = np.ascontiguousarray(arr, dtype="<f8")
        if arr.ndim < 1 or any(d < 1 for d in arr.shape):
            raise InvariantViolation(f"invalid dims {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return "f32" if self.data.dtype == np.float32 else "f64"

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTensor):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.dtype == other.dtype
            and self.data.tobytes() == other.data.tobytes()
        )


def write_mcle(tensor: EmbeddingTensor, sink) -> int:
    """Serialize to the byte sink, returning the number of bytes written."""
    header = MAGIC + struct.pack(
        "<III", VERSION, _DTYPE_CODES[tensor.dtype], len(tensor.dims)
    )
    header += struct.pack(f"<{len(tensor.dims)}Q", *tensor.dims)
    payload = tensor.data.tobytes(order="C")
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def mcle_bytes(tensor: EmbeddingTensor) -> bytes:
    buf = io.BytesIO()
    write_mcle(tensor, buf)
    return buf.getvalue()


def _read_exact(source, n: int, what: str) -> bytes:
    chunk = source.read(n)
    if len(chunk) != n:
        raise TruncatedPayload(f"expected {n} bytes for {what}, got {len(chunk)}")
    return chunk


def read_mcle(source) -> EmbeddingTensor:
    """Parse one MCLE record from a byte stream (anything with .read)."""
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    magic = source.read(4)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    version, code, ndim = struct.unpack("<III", _read_exact(source, 12, "header"))
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if code not in _CODE_DTYPES:
        raise McleError(f"unknown dtype code {code}")
    if ndim < 1:
        raise DimOverflow("ndim must be >= 1")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(source, 8 * ndim, "dims"))
    dtype = _CODE_DTYPES[code]
    count = 1
    for d in dims:
        if d < 1:
            raise DimOverflow(f"dim {d} < 1")
        count *= d
        if count * dtype.itemsize > _MAX_BYTES:
            raise DimOverflow(f"dims {dims} exceed addressable size")
    payload = _read_exact(source, count * dtype.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return EmbeddingTensor(arr.copy())


@dataclass(frozen=True)
class EmbeddingBundle:
    """One global [D] embedding plus per-key-layer local [n_patches, D] maps."""

    global_: EmbeddingTensor
    locals_: tuple[EmbeddingTensor, ...]
    source_id: str = ""

    def __post_init__(self):
        if len(self.global_.dims) != 1:
            raise InvariantViolation(f"global must be 1-D, got {self.global_.dims}")
        if len(self.locals_) < 1:
            raise InvariantViolation("bundle needs at least one local tensor")
        d = self.global_.dims[0]
        for i, loc in enumerate(self.locals_):
            if len(loc.dims) != 2 or loc.dims[1] != d:
                raise InvariantViolation(
                    f"local {i} has dims {loc.dims}, expected [n_patches, {d}]"
                )

    @property
    def dim(self) -> int:
        return self.global_.dims[0]


class EmbeddingProvider:
    """Resolves (sample id, branch tag) to an EmbeddingBundle, deterministically."""

    def get(self, sample: str, branch: str) -> EmbeddingBundle:
        raise NotImplementedError


_LOCAL_RE = re.compile(r"\.local(\d+)\.mcle$")


class _FileProvider(EmbeddingProvider):
    def __init__(self, root: Path, rgb_locals: int):
        self.root = root
        self.rgb_locals = rgb_locals

    def get(self, sample: str, branch: str) -> EmbeddingBundle:
        base = self.root / sample
        gpath = base / f"{branch}.global.mcle"
        if not gpath.is_file():
            raise MissingEmbedding(f"{sample}/{branch}.global.mcle")
        locals_ = []
        m = 0
        while True:
            lpath = base / f"{branch}.local{m}.mcle"
            if not lpath.is_file():
                break
            with open(lpath, "rb") as fh:
                locals_.append(read_mcle(fh))
            m += 1
        expected = self.rgb_locals if branch == "rgb" else None
        if m == 0 or (expected is not None and m != expected):
            want = expected if expected is not None else max(m, 1)
            raise MissingEmbedding(f"{sample}/{branch}.local{m}.mcle (found {m}, need {want})")
        with open(gpath, "rb") as fh:
            global_ = read_mcle(fh)
        return EmbeddingBundle(global_, tuple(locals_), source_id=f"{sample}/{branch}")


def file_provider(root: str | Path, rgb_locals: int = 4) -> EmbeddingProvider:
    """Provider over `<root>/<sample>/<branch>.global.mcle` + `.local<m>.mcle` files.

    Locals are numbered from 0 and must be contiguous. Missing files raise
    MissingEmbedding naming the absent path; nothing is silently defaulted.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingEmbedding(f"embedding root {root} does not exist")
    return _FileProvider(root, rgb_locals)


class _ServiceProvider(EmbeddingProvider):
    def __init__(self, endpoint: str, timeout: float):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def get(self, sample: str, branch: str) -> EmbeddingBundle:
        query = urllib.parse.urlencode({"sample": sample, "branch": branch})
        url = f"{self.endpoint}/embed?{query}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                status = resp.status
                body = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"GET {url} -> {exc.code}", status=exc.code) from exc
        except urllib.error.URLError as exc:
            raise TransportError(f"GET {url} failed: {exc.reason}") from exc
        if not 200 <= status < 300:
            raise TransportError(f"GET {url} -> {status}", status=status)
        return parse_bundle_body(body, source_id=f"{sample}/{branch}")


def parse_bundle_body(body: bytes, source_id: str = "") -> EmbeddingBundle:
    """Decode `u32 count | count x MCLE record` into a bundle (global first)."""
    if len(body) < 4:
        raise MalformedBody("body shorter than the count prefix")
    (count,) = struct.unpack("<I", body[:4])
    if count < 2:
        raise MalformedBody(f"bundle needs >= 2 tensors, body declares {count}")
    stream = io.BytesIO(body[4:])
    tensors = []
    for i in range(count):
        try:
            tensors.append(read_mcle(stream))
        except McleError as exc:
            raise MalformedBody(f"record {i}: {exc}") from exc
    if stream.read(1):
        raise MalformedBody("trailing bytes after final record")
    return EmbeddingBundle(tensors[0], tuple(tensors[1:]), source_id=source_id)


def service_provider(endpoint: str, timeout: float = 10.0) -> EmbeddingProvider:
    """Provider over `GET <endpoint>/embed?sample=<id>&branch=<tag>`."""
    return _ServiceProvider(endpoint, timeout)
