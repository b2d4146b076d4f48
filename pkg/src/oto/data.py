"""Datasets: synthetic luma corpora, even cropping, and aligned patch extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("gradient", "checker", "texture", "mixed")


def crop_even(image: np.ndarray, multiple: int = 2) -> np.ndarray:
    """Crop trailing rows/columns so both dimensions are multiples of ``multiple``."""
    h, w = image.shape[:2]
    return image[: h - h % multiple, : w - w % multiple]


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    span = rng.uniform(60, 200)
    start = rng.uniform(16, 235 - span)
    row = start + span * np.arange(size) / (size - 1)
    return np.tile(row, (size, 1))


def _checker(rng: np.random.Generator, size: int) -> np.ndarray:
    cell = int(rng.choice([4, 6, 10, 12, 16]))
    lo, hi = np.sort(rng.uniform(30, 225, size=2))
    yy, xx = np.mgrid[:size, :size]
    return np.where(((yy // cell) + (xx // cell)) % 2 == 0, lo, hi)


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64) / size
    img = np.zeros((size, size))
    # smooth shading
    img += rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
    # oriented sinusoids from coarse to fine
    for _ in range(4):
        freq = rng.uniform(1.0, size / 6.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.2, 1.0) / (1 + freq / 8)
        img += amp * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    # a few hard-edged shapes
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.3)
        level = rng.uniform(-1, 1)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.3, 1.5))
        img[mask] += level
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return 20 + 215 * img


_MAKERS = {"gradient": _gradient, "checker": _checker, "texture": _texture}


def make_synthetic_corpus(kind: str, count: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Deterministic float luma images in [0, 255] of shape ``(size, size)``.

    ``mixed`` cycles texture, gradient and checker images (texture-weighted).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}; choose from {KINDS}")
    if size % 32:
        raise ValueError(f"corpus size must be a multiple of 32, got {size}")
    rng = np.random.default_rng(seed)
    cycle = ["texture", "texture", "gradient", "texture", "checker"]
    images = []
    for i in range(count):
        k = cycle[i % len(cycle)] if kind == "mixed" else kind
        images.append(_MAKERS[k](rng, size))
    return images


@dataclass
class PatchSpec:
    patch_size: int = 48
    stride: int = 48
    rotations: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        bad = set(self.rotations) - {90, 180, 270}
        if bad:
            raise ValueError(f"rotations must be among 90/180/270, got {sorted(bad)}")
        if self.patch_size < 1 or self.stride < 1:
            raise ValueError("patch_size and stride must be positive")


def grid_positions(h: int, w: int, size: int, stride: int) -> list[tuple[int, int]]:
    return [(r, c) for r in range(0, h - size + 1, stride) for c in range(0, w - size + 1, stride)]


def extract_patches(
    clean: np.ndarray,
    degraded: np.ndarray,
    spec: PatchSpec,
    seed: int | None = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned ``(degraded, clean)`` patch stacks of shape ``(k, size, size)``.

    Patches are taken on a grid over the original image and over each
    rotated copy (``np.rot90`` counter-clockwise), then shuffled with ``seed``
    (no shuffle when ``seed`` is None).
    """
    clean = np.asarray(clean, dtype=np.float64)
    degraded = np.asarray(degraded, dtype=np.float64)
    if clean.shape != degraded.shape:
        raise ValueError(f"clean {clean.shape} and degraded {degraded.shape} differ in shape")
    size = spec.patch_size
    if size > min(clean.shape):
        raise ValueError(f"patch size {size} exceeds image size {clean.shape}")
    out_d, out_c = [], []
    for rot in (0, *spec.rotations):
        k = rot // 90
        c_img, d_img = np.rot90(clean, k), np.rot90(degraded, k)
        for r, col in grid_positions(*c_img.shape, size, spec.stride):
            out_c.append(c_img[r:r + size, col:col + size])
            out_d.append(d_img[r:r + size, col:col + size])
    deg, cln = np.stack(out_d), np.stack(out_c)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(deg))
        deg, cln = deg[order], cln[order]
    return deg, cln


@dataclass
class PairDataset:
    """Degraded/clean luma pairs; images may differ in size between pairs."""

    degraded: list[np.ndarray]
    clean: list[np.ndarray]
    names: list[str] | None = None

    def __post_init__(self):
        if len(self.degraded) != len(self.clean):
            raise ValueError("degraded and clean lists differ in length")
        for d, c in zip(self.degraded, self.clean):
            if d.shape != c.shape:
                raise ValueError(f"pair shape mismatch {d.shape} vs {c.shape}")
        if self.names is None:
            self.names = [f"img{i:04d}" for i in range(len(self.clean))]

    def __len__(self) -> int:
        return len(self.clean)

    def patches(self, spec: PatchSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        ds, cs = [], []
        for i, (d, c) in enumerate(zip(self.degraded, self.clean)):
            pd, pc = extract_patches(c, d, spec, seed=None)
            ds.append(pd)
            cs.append(pc)
        deg, cln = np.concatenate(ds), np.concatenate(cs)
        order = np.random.default_rng(seed).permutation(len(deg))
        return deg[order], cln[order]


def degrade_corpus(images: list[np.ndarray], codec) -> PairDataset:
    """Apply ``codec(image) -> degraded`` to every image."""
    return PairDataset([codec(im) for im in images], [np.asarray(im, dtype=np.float64) for im in images])
