"""Binary PNM image I/O (P5 grayscale, P6 RGB) with maxval 255.

Reading tolerates comments and arbitrary whitespace runs in the header.
Writing emits the canonical form, single spaces between all header tokens and
exactly one space before the payload, so writing back a canonical file
reproduces it byte for byte.
"""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


_WHITESPACE = b" \t\n\r\x0b\x0c"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos] not in b"\n\r":
                pos += 1
        elif data[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("truncated header")
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_pnm(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to (h, w) or (h, w, 3) uint8."""
    magic, pos = _next_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"bad magic {magic!r}, expected P5 or P6")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise FormatError(f"bad header token {token!r}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, only 255 is handled")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing separator before payload")
    pos += 1
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}")
    img = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return img.reshape(height, width).copy()
    return img.reshape(height, width, 3).copy()


def write_pnm(img: np.ndarray) -> bytes:
    """Encode (h, w) or (h, w, 3) uint8 to canonical P5/P6 bytes."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise FormatError(f"image dtype must be uint8, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"image shape {img.shape} is neither (h, w) nor (h, w, 3)")
    h, w = img.shape[:2]
    header = b"%s %d %d 255 " % (magic, w, h)
    return header + img.tobytes(order="C")


def read_pnm_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_pnm(fh.read())


def write_pnm_file(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pnm(img))


def to_features(img: np.ndarray) -> np.ndarray:
    """(n_pix, channels) float32 stack scaled to [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    return (img.reshape(h * w, c).astype(np.float32)) / np.float32(255.0)
