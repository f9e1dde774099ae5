"""Binary PGM (P5) and PPM (P6) reading and writing, bit-exact.

Readers tolerate any whitespace and ``#`` comments inside the header; the
writer always emits the canonical header ``P5|P6\\n<w> <h>\\n255\\n`` so a given
image maps to exactly one byte sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PnmError(ValueError):
    """Malformed or unsupported PNM content."""


@dataclass
class RasterImage:
    """8-bit raster: ``pixels`` is (h, w) for grayscale or (h, w, 3) for RGB."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.dtype != np.uint8:
            raise PnmError(f"samples must be uint8, got {self.pixels.dtype}")
        if self.pixels.ndim == 2:
            return
        if self.pixels.ndim == 3 and self.pixels.shape[2] == 3:
            return
        raise PnmError(f"unsupported raster shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Scan forward over whitespace and comments; return (token, next position)."""
    n = len(data)
    while pos < n:
        byte = data[pos:pos + 1]
        if byte == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise PnmError(f"unterminated comment at byte {pos}")
            pos = eol + 1
        elif byte.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PnmError(f"header ended early at byte {pos}")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def read_pnm(path: str | Path) -> RasterImage:
    data = Path(path).read_bytes()
    magic, pos = _next_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PnmError(f"unsupported magic {magic!r} at byte 0")
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(data, pos)
        if not token.isdigit():
            raise PnmError(f"bad {name} token {token!r} at byte {pos - len(token)}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise PnmError(f"only maxval 255 is supported, file declares {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PnmError(f"expected single whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise PnmError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return RasterImage(pixels.reshape(shape).copy())


def write_pnm(image: RasterImage, path: str | Path) -> None:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    try:
        Path(path).write_bytes(header + image.pixels.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def float_to_bytes(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero onto 0..255."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def bytes_to_float(samples: np.ndarray) -> np.ndarray:
    return samples.astype(np.float64) / 255.0


def write_gray_float(values: np.ndarray, path: str | Path) -> None:
    """Write a float image in [0, 1] (or anything clampable) as a P5 graymap."""
    write_pnm(RasterImage(float_to_bytes(values)), path)


def write_rgb_float(planes: np.ndarray, path: str | Path) -> None:
    """Write a (3, h, w) float image in [0, 1] as a P6 pixmap."""
    write_pnm(RasterImage(float_to_bytes(np.moveaxis(planes, 0, 2))), path)


def read_rgb_float(path: str | Path) -> np.ndarray:
    """Read a P6 file into a (3, h, w) float array in [0, 1]."""
    image = read_pnm(path)
    if image.channels != 3:
        raise PnmError(f"{path} is not an RGB pixmap")
    return np.moveaxis(bytes_to_float(image.pixels), 2, 0)


def read_mask(path: str | Path) -> np.ndarray:
    """Read a P5 mask written as {0, 255} into a binary {0, 1} uint8 array."""
    image = read_pnm(path)
    if image.channels != 1:
        raise PnmError(f"{path} is not a graymap")
    return (image.pixels >= 128).astype(np.uint8)


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    write_pnm(RasterImage((np.asarray(mask) > 0).astype(np.uint8) * 255), path)
