"""Binary PPM (P6) and PGM (P5) readers and writers, maxval 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def _write(path, magic: bytes, arr: np.ndarray):
    h, w = arr.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + arr.tobytes())


def write_ppm(path, image: np.ndarray):
    """image: (H, W, 3) uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DataError(f"write_ppm expects (H, W, 3) uint8, got "
                        f"{image.shape} {image.dtype}")
    _write(path, b"P6", image)


def write_pgm(path, image: np.ndarray):
    """image: (H, W) uint8."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError(f"write_pgm expects (H, W) uint8, got "
                        f"{image.shape} {image.dtype}")
    _write(path, b"P5", image)


def _read_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Parse `count` whitespace/comment-separated ASCII ints; returns
    (values, offset of the byte after the single whitespace that ends
    the header)."""
    vals: list[int] = []
    i = 0
    n = len(data)
    while len(vals) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in (10, 13):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i] != ord("#"):
            i += 1
        tok = data[start:i]
        if not tok:
            raise DataError("truncated netpbm header")
        try:
            vals.append(int(tok))
        except ValueError:
            raise DataError(f"bad netpbm header token {tok!r}") from None
    if i >= n or not data[i:i + 1].isspace():
        raise DataError("netpbm header not terminated by whitespace")
    return vals, i + 1


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} netpbm file")
    (w, h, maxval), off = _read_tokens(data[len(magic):], 3)
    off += len(magic)
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    if w < 1 or h < 1:
        raise DataError(f"{path}: bad dimensions {w}x{h}")
    need = w * h * channels
    body = data[off:off + need]
    if len(body) != need:
        raise DataError(f"{path}: expected {need} pixel bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(h, w).copy()
    return arr.reshape(h, w, channels).copy()


def read_ppm(path) -> np.ndarray:
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    return _read(path, b"P5", 1)
