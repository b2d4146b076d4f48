import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import spiht_reference
from oto.codecs import make_codec
from oto.codecs.jpeg import LUMA_QTABLE, JpegSimParams, dct8, idct8, jpeg_compress_luma, quality_scale, quant_table
from oto.codecs.spiht import (
    HEADER_BITS,
    Bitstream,
    CodingTrace,
    MalformedStream,
    SpihtParams,
    bit_budget,
    encode_tile,
    spiht_compress_image,
    spiht_compress_image_with_rate,
    spiht_decode_block,
    spiht_decode_coefficients,
    spiht_encode_block,
)
from oto.codecs.wavelet import dwt1d, dwt2d, idwt2d, subbands
from oto.data import make_synthetic_corpus
from oto.metrics import mse, psnr, psnr_b

# ---------------------------------------------------------------------------
# JPEG


def naive_dct(block):
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
            cv = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += block[x, y] * math.cos((2 * x + 1) * u * math.pi / 16) * math.cos((2 * y + 1) * v * math.pi / 16)
            out[u, v] = cu * cv * s
    return out


class TestJpeg:
    def test_dct_matches_double_sum(self):
        block = np.random.default_rng(0).uniform(-128, 127, (8, 8))
        np.testing.assert_allclose(dct8(block), naive_dct(block), atol=1e-9)
        np.testing.assert_allclose(idct8(dct8(block)), block, atol=1e-9)

    def test_quality_50_uses_base_table(self):
        assert quality_scale(50) == 100
        np.testing.assert_array_equal(quant_table(50), LUMA_QTABLE)

    @pytest.mark.parametrize("q", [1, 10, 25, 49, 75, 100])
    def test_table_rule(self, q):
        s = 5000 // q if q < 50 else 200 - 2 * q
        expected = np.clip((LUMA_QTABLE * s + 50) // 100, 1, 255)
        np.testing.assert_array_equal(quant_table(q), expected)

    @pytest.mark.parametrize("q", [0, 101])
    def test_quality_range(self, q):
        with pytest.raises(ValueError):
            JpegSimParams(q)

    def test_constant_image(self):
        img = np.full((16, 24), 77.0)
        out = jpeg_compress_luma(img, 10)
        assert np.ptp(out) < 1e-9
        assert abs(out[0, 0] - 77) <= quant_table(10)[0, 0] / 8

    def test_quality_ordering_on_random_image(self):
        img = np.random.default_rng(1).uniform(0, 255, (64, 64))
        p10, p40 = psnr(img, jpeg_compress_luma(img, 10)), psnr(img, jpeg_compress_luma(img, 40))
        assert math.isfinite(p10) and p10 < p40

    def test_second_pass_is_nearly_idempotent(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=2)[0]
        once = jpeg_compress_luma(img, 20)
        twice = jpeg_compress_luma(once, 20)
        assert psnr(once, twice) > psnr(img, once)

    def test_padding_and_clamp(self):
        img = np.random.default_rng(3).uniform(0, 255, (13, 21))
        out = jpeg_compress_luma(img, 10)
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 255

    def test_blockwise_independence(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=4)[0]
        out = jpeg_compress_luma(img, 30)
        np.testing.assert_array_equal(out[8:16, 16:24], jpeg_compress_luma(img[8:16, 16:24], 30))

    def test_codec_output_is_8bit(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=5)[0]
        out = make_codec("jpeg", 10)(img)
        assert np.array_equal(out, np.round(out))


# ---------------------------------------------------------------------------
# CDF 9/7

H0 = np.array([0.026748757410810, -0.016864118442875, -0.078223266528990, 0.266864118442875, 0.602949018236360,
               0.266864118442875, -0.078223266528990, -0.016864118442875, 0.026748757410810])
H1 = np.array([0.091271763114250, -0.057543526228500, -0.591271763114250, 1.115087052456994,
               -0.591271763114250, -0.057543526228500, 0.091271763114250])


def filter_bank(x):
    """Convolution-form 9/7 analysis with whole-sample symmetric extension.

    Scaled so the lowpass has DC gain sqrt(2) and the highpass Nyquist gain sqrt(2).
    """
    n = len(x)
    ext = np.pad(x, 8, mode="reflect")
    low = np.array([np.dot(H0, ext[8 + 2 * k - 4: 8 + 2 * k + 5]) for k in range(n // 2)])
    high = np.array([np.dot(H1, ext[8 + 2 * k + 1 - 3: 8 + 2 * k + 1 + 4]) for k in range(n // 2)])
    return low * math.sqrt(2), high / math.sqrt(2)


class TestWavelet:
    def test_filter_gains(self):
        assert H0.sum() == pytest.approx(1.0)
        assert np.dot(H1, (-1.0) ** np.arange(7)) == pytest.approx(-2.0)

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_lifting_matches_filter_bank(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        low, high = dwt1d(x)
        ref_low, ref_high = filter_bank(x)
        np.testing.assert_allclose(low, ref_low, atol=1e-9)
        np.testing.assert_allclose(high, ref_high, atol=1e-9)

    def test_two_d_is_separable_filter_bank(self):
        tile = np.random.default_rng(0).uniform(0, 255, (16, 16))
        rows = np.array([np.concatenate(filter_bank(r)) for r in tile])
        ref = np.array([np.concatenate(filter_bank(c)) for c in rows.T]).T
        np.testing.assert_allclose(dwt2d(tile, 1), ref, atol=1e-9)

    def test_round_trip(self):
        tile = np.random.default_rng(1).uniform(0, 255, (32, 32))
        assert np.abs(idwt2d(dwt2d(tile, 4), 4) - tile).max() < 1e-6

    def test_constant_tile(self):
        pyr = dwt2d(np.full((32, 32), 100.0), 4)
        for level in range(1, 5):
            bands = subbands(pyr, level)
            for name in ("vertical", "horizontal", "diagonal"):
                assert np.abs(bands[name]).max() < 1e-9
        np.testing.assert_allclose(pyr[:2, :2], 100.0 * 2**4)

    def test_step_edge_energy(self):
        tile = np.zeros((32, 32))
        tile[:, 13:] = 255.0  # intensity steps along x
        bands = subbands(dwt2d(tile, 1), 1)
        energy = {k: float(np.sum(v**2)) for k, v in bands.items()}
        assert energy["vertical"] > 10 * max(energy["horizontal"], energy["diagonal"], 1e-12)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            dwt2d(np.zeros((24, 24)), 4)


# ---------------------------------------------------------------------------
# SPIHT


def random_tiles(count, seed=0):
    rng = np.random.default_rng(seed)
    tiles = list(make_synthetic_corpus("texture", count // 2, 32, seed=seed))
    tiles += [rng.uniform(0, 255, (32, 32)) for _ in range(count - len(tiles))]
    return tiles


class TestSpiht:
    def test_budget_values(self):
        assert bit_budget(32, 8) == 1024 and bit_budget(32, 64) == 128
        assert SpihtParams(16).bit_budget == 512

    def test_budget_too_small(self):
        with pytest.raises(ValueError):
            spiht_encode_block(np.zeros((32, 32)), 15)

    def test_all_zero(self):
        stream = spiht_encode_block(np.zeros((32, 32)), 1024)
        assert stream.length == HEADER_BITS
        recon, _ = spiht_decode_coefficients(stream)
        assert not recon.any()

    @pytest.mark.parametrize("k", [0, 3, 7])
    def test_single_coefficient(self, k):
        coeffs = np.zeros((32, 32))
        value = 2.0**k * 1.3
        coeffs[0, 0] = value
        trace = CodingTrace()
        stream = spiht_encode_block(coeffs, 64, trace=trace)
        assert trace.events[0] == (k, 0, 0, 1)
        recon, _ = spiht_decode_coefficients(stream)
        assert 2.0**k <= recon[0, 0] < 2.0 ** (k + 1)
        assert abs(recon[0, 0] - value) <= 2.0**k / 2

    def test_stream_never_exceeds_budget(self):
        for tile in random_tiles(4, seed=1):
            for budget in (16, 17, 100, 1024):
                assert encode_tile(tile, budget).length <= budget

    def test_near_lossless(self):
        for tile in random_tiles(6, seed=2):
            assert psnr(tile, spiht_decode_block(encode_tile(tile, 8 * 32 * 32))) > 50

    def test_header_only_is_flat(self):
        tile = random_tiles(1, seed=3)[0]
        out = spiht_decode_block(encode_tile(tile, 1024).prefix(HEADER_BITS))
        assert np.ptp(out) == 0 and out[0, 0] == round(tile.mean())

    def test_prefix_distortion_non_increasing(self):
        for tile in random_tiles(4, seed=4):
            stream = encode_tile(tile, 2048)
            cuts = np.linspace(HEADER_BITS, stream.length, 8).astype(int)
            errs = [mse(tile, spiht_decode_block(stream.prefix(c))) for c in cuts]
            assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:])), errs

    def test_matches_reference_decoder(self):
        for tile in random_tiles(10, seed=5):
            trace = CodingTrace()
            offset = int(round(tile.mean()))
            stream = spiht_encode_block(dwt2d(tile - offset), 1024, offset=offset, trace=trace)
            ref_coeffs, ref_offset, ref_events = spiht_reference.decode(stream.bits[: stream.length])
            assert ref_events == trace.events
            recon, got_offset = spiht_decode_coefficients(stream)
            assert got_offset == ref_offset == offset
            np.testing.assert_allclose(recon, ref_coeffs, atol=1e-12)

    def test_decoder_trace_mirrors_encoder(self):
        tile = random_tiles(1, seed=6)[0]
        enc, dec = CodingTrace(), CodingTrace()
        stream = spiht_encode_block(dwt2d(tile - 128), 600, offset=128, trace=enc)
        spiht_decode_coefficients(stream, trace=dec)
        assert enc.events == dec.events

    def test_bytes_round_trip(self):
        stream = encode_tile(random_tiles(1, seed=7)[0], 333)
        again = Bitstream.from_bytes(stream.to_bytes(), stream.length)
        np.testing.assert_array_equal(again.bits, stream.bits[: stream.length])

    def test_malformed(self):
        with pytest.raises(MalformedStream):
            spiht_decode_block(Bitstream(np.zeros(8, np.uint8)))
        with pytest.raises(MalformedStream):
            Bitstream.from_bytes(b"\x00", 16)

    def test_ratio_ordering_on_tile(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=8)[0]
        errs = [mse(img, spiht_compress_image(img, r)) for r in (8, 16, 32, 64)]
        assert errs == sorted(errs) and errs[0] < errs[-1]

    def test_constant_image(self):
        out = spiht_compress_image(np.full((64, 96), 140.0), 64)
        assert np.all(out == 140)

    def test_blocking_penalty_at_ratio_32(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=9)[0]
        out = spiht_compress_image(img, 32)
        assert psnr_b(img, out, block_size=32) < psnr(img, out)

    def test_rate_report_and_padding(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=10)[0][:50, :40]
        out, rate = spiht_compress_image_with_rate(img, 16)
        assert out.shape == (50, 40) and rate["tiles"] == 4
        assert rate["bits"] <= rate["budget_bits"] == 4 * 512
        assert 0 <= out.min() and out.max() <= 255 and np.array_equal(out, np.round(out))

    def test_tiles_are_independent(self):
        img = make_synthetic_corpus("texture", 1, 64, seed=11)[0]
        out = spiht_compress_image(img, 16)
        np.testing.assert_array_equal(out[32:, :32], spiht_compress_image(img[32:, :32], 16))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(16, 1200), st.integers(0, 2**32 - 1))
    def test_any_prefix_decodes(self, cut, seed):
        tile = np.random.default_rng(seed).uniform(0, 255, (32, 32))
        stream = encode_tile(tile, 1200)
        out = spiht_decode_block(stream.prefix(cut))
        assert out.shape == (32, 32) and np.all(np.isfinite(out))
