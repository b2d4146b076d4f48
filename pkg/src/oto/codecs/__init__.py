"""Compression simulators: blockwise JPEG and CDF 9/7 + SPIHT."""

from __future__ import annotations

from typing import Callable

import numpy as np

from oto.codecs.jpeg import JpegSimParams, jpeg_compress_luma
from oto.codecs.spiht import SpihtParams, spiht_compress_image, spiht_compress_image_with_rate

CODECS = ("jpeg", "spiht")


def make_codec(name: str, setting: int) -> Callable[[np.ndarray], np.ndarray]:
    """Image -> degraded image as an 8-bit decoder would emit it (rounded, in [0, 255]).

    ``setting`` is the JPEG quality factor or the SPIHT compression ratio.
    """
    if name == "jpeg":
        params = JpegSimParams(int(setting))
        return lambda img: np.round(jpeg_compress_luma(img, params))
    if name == "spiht":
        params = SpihtParams(int(setting))
        return lambda img: spiht_compress_image(img, params)
    raise ValueError(f"unknown codec {name!r}; choose from {CODECS}")


def block_size_of(name: str) -> int:
    """Codec block size, used as the PSNR-B block parameter."""
    return {"jpeg": 8, "spiht": 32}[name]


__all__ = [
    "CODECS",
    "JpegSimParams",
    "SpihtParams",
    "block_size_of",
    "jpeg_compress_luma",
    "make_codec",
    "spiht_compress_image",
    "spiht_compress_image_with_rate",
]
