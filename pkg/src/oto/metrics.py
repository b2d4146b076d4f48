"""PSNR, PSNR-B and SSIM on [0, 255] luma planes."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import correlate2d

PSNR_DISPLAY_CAP = 99.99


@dataclass(frozen=True)
class MetricsConfig:
    peak: float = 255.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    block_size: int = 8


@dataclass
class MetricsReport:
    psnr: float
    psnr_b: float
    ssim: float
    block_size: int
    name: str = ""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def _db(peak: float, err: float) -> float:
    if err <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr(a, b, peak: float = 255.0) -> float:
    """PSNR in dB; identical inputs give ``inf``."""
    return _db(peak, mse(a, b))


def display_db(value: float) -> float:
    return min(value, PSNR_DISPLAY_CAP)


def blocking_effect_factor(image, block_size: int) -> float:
    """Blocking effect factor of one image (Yim and Bovik's PSNR-B construction).

    Mean squared differences of horizontally/vertically adjacent pixel pairs
    straddling block boundaries are compared with those of all other adjacent
    pairs; the excess, weighted by log2(B)/log2(min(h, w)), is returned (0 when
    boundary pairs are no rougher than the rest).
    """
    x = np.asarray(image, dtype=np.float64)
    h, w = x.shape
    if block_size < 2 or block_size >= min(h, w):
        raise ValueError(f"block size {block_size} must be in [2, {min(h, w) - 1}] for a {h}x{w} image")
    dh = (x[:, :-1] - x[:, 1:]) ** 2  # pair (j-1, j) stored at column j-1
    dv = (x[:-1, :] - x[1:, :]) ** 2
    col_b = np.zeros(w - 1, dtype=bool)
    col_b[block_size - 1::block_size] = True
    row_b = np.zeros(h - 1, dtype=bool)
    row_b[block_size - 1::block_size] = True
    n_b = h * col_b.sum() + w * row_b.sum()
    n_bc = h * (~col_b).sum() + w * (~row_b).sum()
    if n_b == 0 or n_bc == 0:
        return 0.0
    d_b = (dh[:, col_b].sum() + dv[row_b, :].sum()) / n_b
    d_bc = (dh[:, ~col_b].sum() + dv[~row_b, :].sum()) / n_bc
    if d_b <= d_bc:
        return 0.0
    eta = math.log2(block_size) / math.log2(min(h, w))
    return float(eta * (d_b - d_bc))


def psnr_b(clean, test, config: MetricsConfig | None = None, block_size: int | None = None) -> float:
    """PSNR-B of ``test`` against ``clean``; the blocking factor is measured on ``test`` only."""
    config = config or MetricsConfig()
    clean, test = _pair(clean, test)
    bs = block_size or config.block_size
    return _db(config.peak, mse(clean, test) + blocking_effect_factor(test, bs))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(a, b, config: MetricsConfig | None = None) -> np.ndarray:
    config = config or MetricsConfig()
    a, b = _pair(a, b)
    if min(a.shape) < config.ssim_window:
        raise ValueError(f"image {a.shape} is smaller than the {config.ssim_window}x{config.ssim_window} SSIM window")
    win = gaussian_window(config.ssim_window, config.ssim_sigma)
    c1 = (config.ssim_k1 * config.peak) ** 2
    c2 = (config.ssim_k2 * config.peak) ** 2

    def filt(x):
        return correlate2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filt(a * a) - mu_aa
    var_b = filt(b * b) - mu_bb
    cov = filt(a * b) - mu_ab
    return ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2))


def ssim(a, b, config: MetricsConfig | None = None) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows."""
    return float(np.mean(ssim_map(a, b, config)))


def evaluate_pair(clean, test, config: MetricsConfig | None = None, name: str = "") -> MetricsReport:
    config = config or MetricsConfig()
    return MetricsReport(
        psnr=psnr(clean, test, config.peak),
        psnr_b=psnr_b(clean, test, config),
        ssim=ssim(clean, test, config),
        block_size=config.block_size,
        name=name,
    )


def mean_report(reports: Sequence[MetricsReport], name: str = "MEAN") -> MetricsReport:
    if not reports:
        raise ValueError("no reports to average")
    return MetricsReport(
        psnr=float(np.mean([r.psnr for r in reports])),
        psnr_b=float(np.mean([r.psnr_b for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        block_size=reports[0].block_size,
        name=name,
    )


CSV_FIELDS = ("name", "psnr", "psnr_b", "ssim", "block_size")


def write_report_csv(path, reports: Iterable[MetricsReport], with_mean: bool = True) -> None:
    """One row per image ``name,psnr,psnr_b,ssim,block_size`` plus a trailing ``MEAN`` row.

    Infinite dB values (identical images) are written capped at 99.99.
    """
    reports = list(reports)
    rows = reports + ([mean_report(reports)] if with_mean and reports else [])
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([r.name, f"{display_db(r.psnr):.6f}", f"{display_db(r.psnr_b):.6f}", f"{r.ssim:.6f}", r.block_size])


def read_report_csv(path) -> list[MetricsReport]:
    with open(Path(path), newline="") as fh:
        return [
            MetricsReport(float(r["psnr"]), float(r["psnr_b"]), float(r["ssim"]), int(r["block_size"]), r["name"])
            for r in csv.DictReader(fh)
        ]


def report_dict(r: MetricsReport) -> dict:
    return asdict(r)
