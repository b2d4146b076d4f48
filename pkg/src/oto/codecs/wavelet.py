"""CDF 9/7 biorthogonal wavelet via lifting, with whole-sample symmetric extension.

The 2-D pyramid uses the Mallat layout: after ``levels`` stages the coarsest
approximation sits in the top-left ``(h >> levels, w >> levels)`` corner and
each stage's detail subbands surround it.  Subbands are scaled to be close
to orthonormal (low band DC gain sqrt(2), high band Nyquist gain sqrt(2)), so
coefficient magnitudes are comparable across levels, as SPIHT assumes.
"""

from __future__ import annotations

import numpy as np

ALPHA = -1.586134342059924
BETA = -0.052980118572961
GAMMA = 0.882911075530934
DELTA = 0.443506852043971
K = 1.230174104914001

LOW_GAIN = np.sqrt(2.0) / K
HIGH_GAIN = K / np.sqrt(2.0)


def _next(a: np.ndarray) -> np.ndarray:
    # a[i + 1] with the last element mirrored
    return np.concatenate([a[1:], a[-1:]], axis=0)


def _prev(a: np.ndarray) -> np.ndarray:
    # a[i - 1] with the first element mirrored
    return np.concatenate([a[:1], a[:-1]], axis=0)


def dwt1d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One analysis stage along axis 0 (even length); returns (low, high)."""
    s = x[0::2].astype(np.float64, copy=True)
    d = x[1::2].astype(np.float64, copy=True)
    d += ALPHA * (s + _next(s))
    s += BETA * (_prev(d) + d)
    d += GAMMA * (s + _next(s))
    s += DELTA * (_prev(d) + d)
    return s * LOW_GAIN, d * HIGH_GAIN


def idwt1d(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    s = np.asarray(low, dtype=np.float64) / LOW_GAIN
    d = np.asarray(high, dtype=np.float64) / HIGH_GAIN
    s = s - DELTA * (_prev(d) + d)
    d = d - GAMMA * (s + _next(s))
    s = s - BETA * (_prev(d) + d)
    d = d - ALPHA * (s + _next(s))
    out = np.empty((s.shape[0] * 2,) + s.shape[1:], dtype=np.float64)
    out[0::2] = s
    out[1::2] = d
    return out


def _check(shape: tuple[int, int], levels: int) -> None:
    if levels < 0:
        raise ValueError("levels must be non-negative")
    step = 2**levels
    h, w = shape
    if h % step or w % step:
        raise ValueError(f"tile {h}x{w} is not divisible by 2**{levels} = {step}")
    if levels and min(h, w) // step < 1:
        raise ValueError(f"tile {h}x{w} too small for {levels} levels")


def dwt2d(tile: np.ndarray, levels: int = 4) -> np.ndarray:
    """Forward transform into a Mallat-layout pyramid of the same shape."""
    out = np.array(tile, dtype=np.float64)
    _check(out.shape, levels)
    h, w = out.shape
    for _ in range(levels):
        band = out[:h, :w]
        lo, hi = dwt1d(band.T)  # rows: transform along the horizontal axis
        band = np.concatenate([lo, hi], axis=0).T
        lo, hi = dwt1d(band)  # columns
        out[:h, :w] = np.concatenate([lo, hi], axis=0)
        h, w = h // 2, w // 2
    return out


def idwt2d(pyramid: np.ndarray, levels: int = 4) -> np.ndarray:
    out = np.array(pyramid, dtype=np.float64)
    _check(out.shape, levels)
    H, W = out.shape
    for lev in reversed(range(levels)):
        h, w = H >> lev, W >> lev
        band = out[:h, :w]
        band = idwt1d(band[: h // 2], band[h // 2:])
        band = idwt1d(band[:, : w // 2].T, band[:, w // 2:].T).T
        out[:h, :w] = band
    return out


def subbands(pyramid: np.ndarray, level: int) -> dict[str, np.ndarray]:
    """Detail subbands of analysis stage ``level`` (1 = finest).

    ``vertical`` holds horizontal high-pass output (responds to vertical
    edges, i.e. steps along x), ``horizontal`` holds vertical high-pass output.
    """
    H, W = pyramid.shape
    h, w = H >> (level - 1), W >> (level - 1)
    h2, w2 = h // 2, w // 2
    return {
        "approx": pyramid[:h2, :w2],
        "vertical": pyramid[:h2, w2:w],
        "horizontal": pyramid[h2:h, :w2],
        "diagonal": pyramid[h2:h, w2:w],
    }
