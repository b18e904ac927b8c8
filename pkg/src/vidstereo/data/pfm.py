"""Portable float map reader/writer.

Header: ``Pf`` (1 channel) or ``PF`` (3 channels), ``width height``, then a
scale whose sign gives the byte order (negative = little-endian). Rows are
stored bottom-to-top as float32.
"""

from __future__ import annotations

import numpy as np


class PFMError(ValueError):
    pass


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PFMError("truncated PFM header")
    return buf[start:pos], pos


def read_pfm(data: bytes) -> np.ndarray:
    """Decode PFM bytes into ``H x W`` (or ``H x W x 3``) float32, top row first."""
    magic, pos = _next_token(data, 0)
    if magic not in (b"Pf", b"PF"):
        raise PFMError(f"bad PFM magic {magic[:8]!r}")
    channels = 1 if magic == b"Pf" else 3
    try:
        w_tok, pos = _next_token(data, pos)
        h_tok, pos = _next_token(data, pos)
        s_tok, pos = _next_token(data, pos)
        width, height, scale = int(w_tok), int(h_tok), float(s_tok)
    except ValueError as exc:
        raise PFMError(f"malformed PFM header: {exc}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise PFMError(f"malformed PFM header: {width}x{height}, scale {scale}")
    pos += 1  # the single whitespace byte ending the header
    count = width * height * channels
    payload = data[pos:pos + 4 * count]
    if len(payload) < 4 * count:
        raise PFMError(f"truncated PFM payload: need {4 * count} bytes, have {len(payload)}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(arr.reshape(shape)).copy()


def write_pfm(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise PFMError(f"PFM holds H x W or H x W x 3 arrays, got {arr.shape}")
    height, width = arr.shape[:2]
    header = magic + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    return header + np.flipud(arr).astype("<f4").tobytes()


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_pfm(fh.read())


def save_pfm(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pfm(array))
