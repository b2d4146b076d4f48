"""JPEG-style luma degradation: 8x8 block DCT, IJG quality-scaled quantization.

No entropy coding or file format; only the lossy part of baseline JPEG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

BLOCK = 8

# ITU-T T.81 Annex K, table K.1
LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class JpegSimParams:
    quality: int = 10
    block: int = BLOCK

    def __post_init__(self):
        if not 1 <= int(self.quality) <= 100:
            raise ValueError(f"JPEG quality must be in [1, 100], got {self.quality}")
        if self.block != BLOCK:
            raise ValueError("only 8x8 blocks are supported")


def dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes."""
    return dctn(np.asarray(block, dtype=np.float64), type=2, norm="ortho", axes=(-2, -1))


def idct8(coeffs: np.ndarray) -> np.ndarray:
    return idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axes=(-2, -1))


def quality_scale(quality: int) -> int:
    """IJG percentage scaling: 5000/Q below 50, 200 - 2Q from 50 up."""
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quant_table(quality: int) -> np.ndarray:
    scale = quality_scale(quality)
    return np.clip(np.floor((LUMA_QTABLE * scale + 50) / 100), 1, 255)


def pad_to_multiple(image: np.ndarray, m: int) -> np.ndarray:
    h, w = image.shape
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")


def to_blocks(image: np.ndarray, b: int) -> np.ndarray:
    h, w = image.shape
    return image.reshape(h // b, b, w // b, b).swapaxes(1, 2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    nh, nw, b, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(nh * b, nw * b)


def jpeg_compress_luma(image: np.ndarray, params: JpegSimParams | int) -> np.ndarray:
    """Degrade a [0, 255] luma plane; returns a float plane clamped to [0, 255].

    Dimensions that are not multiples of 8 are reflect-padded and cropped back.
    """
    if not isinstance(params, JpegSimParams):
        params = JpegSimParams(int(params))
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    padded = pad_to_multiple(image, BLOCK)
    q = quant_table(params.quality)
    coeffs = dct8(to_blocks(padded - 128.0, BLOCK))
    recon = idct8(np.round(coeffs / q) * q) + 128.0
    return np.clip(from_blocks(recon), 0, 255)[:h, :w]
