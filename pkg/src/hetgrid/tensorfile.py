"""HGT1 tensor container: magic, u32 little-endian rank and dims, float32
little-endian row-major payload. Rank 1 through 4."""

from __future__ import annotations

import struct

import numpy as np

from .pnm import FormatError

MAGIC = b"HGT1"
MAX_RANK = 4


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise FormatError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise FormatError("truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"tensor rank must be 1..{MAX_RANK}, got {rank}")
    dims_end = 8 + 4 * rank
    if len(data) < dims_end:
        raise FormatError("truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    expected = int(np.prod(dims)) * 4
    payload = data[dims_end:]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))
