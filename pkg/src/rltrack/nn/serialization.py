"""Binary weights file.

Layout (little-endian, no padding between records)::

    b"RDTW"  u32 version=1  u32 tensor_count
    repeated tensor_count times:
        u32 name_length  name (UTF-8)  u32 rank  u32 dims[rank]  f32 payload[prod(dims)]
"""

from __future__ import annotations

import os
import struct
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

MAGIC = b"RDTW"
VERSION = 1


class WeightsFileError(Exception):
    """Base class for weights-file failures."""


class BadMagicError(WeightsFileError):
    pass


class UnsupportedVersionError(WeightsFileError):
    pass


class TruncatedWeightsError(WeightsFileError):
    pass


class ManifestMismatchError(WeightsFileError):
    """Tensor names or shapes in the file disagree with what the caller expects."""


def encode_weights(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(tensors: Mapping[str, np.ndarray], path) -> None:
    data = encode_weights(tensors)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedWeightsError(
                f"file ends while reading {what}: need {n} bytes at offset {self.pos}, {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_weights(buf: bytes) -> Dict[str, np.ndarray]:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"not a weights file: magic {buf[:4]!r} != {MAGIC!r}")
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"weights file version {version}, expected {VERSION}")
    count = r.u32("tensor count")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * n, f"payload of {name} {tuple(dims)}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise WeightsFileError(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return out


def load_weights(path, expected: Optional[Mapping[str, Tuple[int, ...]]] = None) -> Dict[str, np.ndarray]:
    """Read a weights file; with ``expected``, also verify the name/shape manifest."""
    with open(path, "rb") as fh:
        tensors = decode_weights(fh.read())
    if expected is not None:
        check_manifest(tensors, expected)
    return tensors


def check_manifest(tensors: Mapping[str, np.ndarray], expected: Mapping[str, Tuple[int, ...]]) -> None:
    for name, shape in expected.items():
        if name not in tensors:
            raise ManifestMismatchError(f"missing tensor {name}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ManifestMismatchError(f"{name}: file has shape {tensors[name].shape}, expected {tuple(shape)}")
