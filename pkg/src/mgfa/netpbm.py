"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""
from __future__ import annotations

import os

import numpy as np

MAX_DIM = 1 << 16


class NetpbmError(ValueError):
    pass


class BadMagicError(NetpbmError):
    pass


class DimensionError(NetpbmError):
    pass


class UnsupportedMaxvalError(NetpbmError):
    pass


class TruncatedError(NetpbmError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i, n = [], 0, len(buf)
    while len(out) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise TruncatedError("header ends early")
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        out.append(buf[i:j])
        i = j
    return out, i


def decode(buf: bytes) -> np.ndarray:
    """Decode to uint8 of shape H×W (P5) or H×W×3 (P6)."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"unsupported magic {magic!r}; expected P5 or P6")
    channels = 1 if magic == b"P5" else 3
    (ws, hs, ms), pos = _tokens(buf[2:], 3)
    pos += 2
    try:
        width, height, maxval = int(ws), int(hs), int(ms)
    except ValueError as exc:
        raise NetpbmError(f"non-numeric header field: {exc}") from None
    if not (0 < width <= MAX_DIM and 0 < height <= MAX_DIM):
        raise DimensionError(f"dimensions {width}x{height} outside 1..{MAX_DIM}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} unsupported; only 255")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise TruncatedError("missing whitespace after header")
    pos += 1
    need = width * height * channels
    body = buf[pos:pos + need]
    if len(body) < need:
        raise TruncatedError(f"body has {len(body)} bytes, expected {need}")
    arr = np.frombuffer(body, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape).copy()


def encode(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise NetpbmError(f"encode expects uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise DimensionError(f"cannot encode array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantize reals in [0, 1] to uint8 via round(v*255)."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PGM/PPM as float64 in [0, 1]."""
    with open(path, "rb") as f:
        return decode(f.read()).astype(np.float64) / 255.0


def write_image(path: str | os.PathLike, data: np.ndarray) -> None:
    """Write uint8 data as-is, anything else as reals in [0, 1]."""
    data = np.asarray(data)
    pixels = data if data.dtype == np.uint8 else to_bytes(data)
    with open(path, "wb") as f:
        f.write(encode(pixels))
