"""Fast built-in checks run by ``oto selftest``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from oto.codecs.jpeg import LUMA_QTABLE, jpeg_compress_luma, quant_table
from oto.codecs.spiht import encode_tile, spiht_decode_block
from oto.codecs.wavelet import dwt2d, idwt2d
from oto.data import make_synthetic_corpus
from oto.metrics import psnr, ssim
from oto.net import OtoConfig, build_model
from oto.tensor import GradCheckReport, Tensor, batch_norm, conv2d, grad_check, mse_loss, RunningStats


def tiny_model_gradcheck(fusion: str = "nonlinear", max_entries: int = 4, seed: int = 0) -> GradCheckReport:
    """Central-difference check of every parameter of a 4-channel model on 8x8 inputs (float64)."""
    cfg = OtoConfig(channels=4, fusion=fusion, units_per_branch=1, tail_resunits=1, output_init_scale=1.0)
    model = build_model(cfg, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((2, 1, 8, 8)), dtype=np.float64)
    target = Tensor(rng.random((2, 1, 8, 8)), dtype=np.float64)
    return grad_check(lambda: mse_loss(model(x), target), model.parameters(), step=1e-6, max_entries=max_entries, floor=1e-6)


def _layer_gradchecks() -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 5, 6)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(2), requires_grad=True, dtype=np.float64)
    t = Tensor(rng.standard_normal((2, 2, 5, 6)), dtype=np.float64)
    g = Tensor(rng.random(3) + 0.5, requires_grad=True, dtype=np.float64)
    be = Tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
    t3 = Tensor(rng.standard_normal((2, 3, 5, 6)), dtype=np.float64)
    return {
        "conv2d": grad_check(lambda: mse_loss(conv2d(x, w, b), t), [x, w, b], step=1e-6),
        "batch_norm": grad_check(
            lambda: mse_loss(batch_norm(x, g, be, RunningStats.fresh(3), training=True), t3), [x, g, be], step=1e-6
        ),
    }


def run_selftest(report: Callable[[str], None] = print) -> int:
    """Run all checks, reporting one line each; returns the number of failures."""
    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = []

    def check(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @check("layer gradients")
    def _():
        reps = _layer_gradchecks()
        worst = max(r.max_rel_error for r in reps.values())
        return worst < 1e-3, f"max rel error {worst:.2e}"

    @check("composed model gradients")
    def _():
        r = tiny_model_gradcheck()
        return r.passed(1e-2), f"max rel error {r.max_rel_error:.2e} over {r.checked} entries"

    @check("JPEG quality-50 table")
    def _():
        return bool(np.array_equal(quant_table(50), LUMA_QTABLE)), "table equals the base luminance table"

    @check("JPEG constant image")
    def _():
        img = np.full((16, 16), 100.0)
        err = float(np.abs(jpeg_compress_luma(img, 10) - img).max())
        return err <= quant_table(10)[0, 0] / 8 + 1e-9, f"max deviation {err:.3f}"

    @check("wavelet round trip")
    def _():
        tile = np.random.default_rng(2).uniform(0, 255, (32, 32))
        err = float(np.abs(idwt2d(dwt2d(tile)) - tile).max())
        return err < 1e-6, f"max error {err:.1e}"

    @check("SPIHT near-lossless")
    def _():
        tile = make_synthetic_corpus("texture", 1, 32, seed=3)[0]
        out = spiht_decode_block(encode_tile(tile, 32 * 32 * 8))
        value = psnr(tile, out)
        return value > 50, f"{value:.2f} dB"

    @check("PSNR of unit offset")
    def _():
        a = np.full((8, 8), 10.0)
        value = psnr(a, a + 1)
        return math.isclose(value, 48.1308, abs_tol=1e-3), f"{value:.4f} dB"

    @check("SSIM of identical images")
    def _():
        a = np.random.default_rng(4).uniform(0, 255, (32, 32))
        value = ssim(a, a)
        return value == 1.0, f"{value!r}"

    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash counts as a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        report(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    report(f"{len(checks) - failures}/{len(checks)} checks passed")
    return failures
