"""PPM (P6) / PGM (P5) snapshot IO used by tests and the external detector wire."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

__all__ = ["encode_ppm", "decode_ppm", "write_ppm", "read_ppm",
           "encode_pgm", "decode_pgm", "write_pgm", "read_pgm"]


def encode_ppm(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError("PPM payload must be (H, W, 3) uint8")
    h, w = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def encode_pgm(mask: np.ndarray) -> bytes:
    """Binary mask as P5; on-pixels stored as 255."""
    if mask.ndim != 2:
        raise ValueError("PGM payload must be 2-D")
    h, w = mask.shape
    data = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + data.tobytes()


def _read_token(buf: io.BytesIO) -> bytes:
    # Skips whitespace and '#' comment lines between header tokens.
    tok = b""
    while True:
        c = buf.read(1)
        if not c:
            break
        if c == b"#":
            while c and c != b"\n":
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                break
            continue
        tok += c
    if not tok:
        raise ValueError("truncated netpbm header")
    return tok


def _decode_netpbm(data: bytes, magic: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    if _read_token(buf) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    w = int(_read_token(buf))
    h = int(_read_token(buf))
    maxval = int(_read_token(buf))
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    raw = buf.read(w * h * channels)
    if len(raw) != w * h * channels:
        raise ValueError("truncated netpbm payload")
    arr = np.frombuffer(raw, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def decode_ppm(data: bytes) -> np.ndarray:
    return _decode_netpbm(data, b"P6")


def decode_pgm(data: bytes) -> np.ndarray:
    """Returns the mask as bool (nonzero = on)."""
    return _decode_netpbm(data, b"P5") > 0


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(pixels))


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(mask))


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())
