"""Binary PGM/PPM (P5/P6) reading and writing, and RGB to luma conversion."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from oto.data import crop_even

_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n?)*([^\s#]+)")


class ImageFormatError(ValueError):
    pass


def _read_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    return fields[0], int(fields[1]), int(fields[2]), int(fields[3]), pos + 1


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (h, w) or PPM (h, w, 3) file as uint8."""
    data = Path(path).read_bytes()
    magic, w, h, maxval, offset = _read_header(data)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported format {magic!r}; only binary P5/P6")
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit images (maxval 255) are supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset) if len(data) - offset >= need else None
    if raster is None:
        raise ImageFormatError(f"{path}: raster truncated")
    return raster.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def write_pgm(path, plane: np.ndarray) -> None:
    """Write a float or integer plane as 8-bit P5 (rounded and clamped)."""
    arr = np.clip(np.round(np.asarray(plane, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(rgb, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma, Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255, as floats."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return 16.0 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255.0


def load_luma(path, even: bool = True) -> np.ndarray:
    """Load a PGM (as is) or PPM (converted to luma) and crop to even dimensions."""
    img = read_pnm(path)
    plane = rgb_to_luma(img) if img.ndim == 3 else img.astype(np.float64)
    return crop_even(plane) if even else plane


def list_images(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"{folder} is not a directory")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
