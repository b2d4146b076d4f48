import numpy as np
import pytest

from oto.codecs import make_codec
from oto.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from oto.data import PatchSpec, crop_even, degrade_corpus, extract_patches, make_synthetic_corpus
from oto.imageio import ImageFormatError, list_images, load_luma, read_pnm, rgb_to_luma, write_pgm, write_ppm
from oto.metrics import mean_report, evaluate_pair
from oto.net import FusionKind, OtoConfig, UnitKind, build_model
from oto.weights import WeightsError, encode, load_weights, save_weights


class TestCorpus:
    def test_gradient_has_constant_first_difference(self):
        for img in make_synthetic_corpus("gradient", 3, 64, seed=0):
            d = np.diff(img, axis=1)
            np.testing.assert_allclose(d, d[0, 0], atol=1e-9)
            assert np.all(np.diff(img, axis=0) == 0)

    @pytest.mark.parametrize("kind", ["gradient", "checker", "texture", "mixed"])
    def test_range_and_determinism(self, kind):
        a = make_synthetic_corpus(kind, 4, 32, seed=9)
        b = make_synthetic_corpus(kind, 4, 32, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert all(x.shape == (32, 32) and x.min() >= 0 and x.max() <= 255 for x in a)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            make_synthetic_corpus("noise", 1)
        with pytest.raises(ValueError):
            make_synthetic_corpus("mixed", 1, size=40)

    def test_crop_even(self):
        assert crop_even(np.zeros((7, 9))).shape == (6, 8)


class TestPatches:
    def test_counts(self):
        img = np.arange(64 * 64, dtype=float).reshape(64, 64)
        assert len(extract_patches(img, img, PatchSpec(32, 32))[0]) == 4
        assert len(extract_patches(img, img, PatchSpec(32, 32, (90, 180, 270)))[0]) == 16

    def test_alignment_and_rotation(self):
        img = np.arange(64 * 64, dtype=float).reshape(64, 64)
        deg, cln = extract_patches(img, img + 0.5, PatchSpec(32, 32, (90, 180, 270)), seed=3)
        rotated = [np.rot90(img, k) for k in range(4)]
        for d, c in zip(deg[:20], cln[:20]):
            np.testing.assert_array_equal(d, c + 0.5)
            assert any(np.array_equal(c, r[a:a + 32, b:b + 32]) for r in rotated for a in (0, 32) for b in (0, 32))

    def test_shuffle_is_seeded(self):
        img = np.random.default_rng(0).random((64, 64))
        a = extract_patches(img, img, PatchSpec(16, 16), seed=1)[0]
        b = extract_patches(img, img, PatchSpec(16, 16), seed=1)[0]
        assert np.array_equal(a, b)

    def test_errors(self):
        with pytest.raises(ValueError):
            PatchSpec(rotations=(45,))
        with pytest.raises(ValueError):
            extract_patches(np.zeros((16, 16)), np.zeros((16, 16)), PatchSpec(32, 32))

    def test_spiht_strong_ratio_is_worse(self):
        images = make_synthetic_corpus("mixed", 4, 64, seed=4)

        def mean_psnr(ratio):
            ds = degrade_corpus(images, make_codec("spiht", ratio))
            return mean_report([evaluate_pair(c, d) for d, c in zip(ds.degraded, ds.clean)]).psnr

        assert mean_psnr(64) < mean_psnr(8)


class TestImageIO:
    def test_luma_coefficients(self):
        rgb = np.array([[[255, 255, 255], [0, 0, 0], [0, 255, 0]]], dtype=np.uint8)
        np.testing.assert_allclose(rgb_to_luma(rgb)[0], [235.0, 16.0, 16 + 128.553], atol=1e-9)
        assert rgb_to_luma(np.array([128, 128, 128]))[()] == pytest.approx(125.93, abs=0.01)

    def test_pgm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (6, 10)).astype(np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pnm(tmp_path / "a.pgm"), img)
        back = load_luma(tmp_path / "a.pgm")
        write_pgm(tmp_path / "b.pgm", back)
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_ppm_to_luma_and_even_crop(self, tmp_path):
        rgb = np.random.default_rng(1).integers(0, 256, (5, 7, 3)).astype(np.uint8)
        write_ppm(tmp_path / "c.ppm", rgb)
        assert np.array_equal(read_pnm(tmp_path / "c.ppm"), rgb)
        np.testing.assert_allclose(load_luma(tmp_path / "c.ppm"), rgb_to_luma(rgb)[:4, :6])

    def test_header_comments(self, tmp_path):
        (tmp_path / "d.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# depth\n255\n\x01\x02")
        assert read_pnm(tmp_path / "d.pgm").tolist() == [[1, 2]]

    @pytest.mark.parametrize("data", [b"P2\n1 1\n255\n7", b"P5\n1 1\n65535\n\x00\x00", b"P5\n4 4\n255\n\x00", b"P5\n4"])
    def test_rejects(self, tmp_path, data):
        (tmp_path / "x.pgm").write_bytes(data)
        with pytest.raises(ImageFormatError):
            read_pnm(tmp_path / "x.pgm")

    def test_list_images(self, tmp_path):
        for name in ("b.pgm", "a.ppm", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in list_images(tmp_path)] == ["a.ppm", "b.pgm"]
        with pytest.raises(FileNotFoundError):
            list_images(tmp_path / "missing")


def small_config(**kw):
    return OtoConfig(channels=4, units_per_branch=1, tail_resunits=1, **kw)


class TestWeights:
    def test_round_trip_bitwise(self, tmp_path):
        a = build_model(small_config(branch_kinds="RD"), seed=1)
        for bn in a.bn_layers():
            bn.stats.mean[...] = np.random.default_rng(0).random(bn.stats.mean.shape)
        save_weights(a, tmp_path / "w.oto")
        b = load_weights(build_model(small_config(branch_kinds="RD"), seed=2), tmp_path / "w.oto")
        assert encode(a) == encode(b)
        x = np.random.default_rng(3).random((1, 1, 16, 16)).astype(np.float32)
        assert np.array_equal(a(x).data, b(x).data)

    def test_digest_mismatch_leaves_model_untouched(self, tmp_path):
        save_weights(build_model(small_config(), seed=1), tmp_path / "w.oto")
        other = build_model(OtoConfig(channels=8, units_per_branch=1, tail_resunits=1), seed=2)
        before = encode(other)
        with pytest.raises(WeightsError, match="digest"):
            load_weights(other, tmp_path / "w.oto")
        assert encode(other) == before

    def test_truncation_names_parameter(self, tmp_path):
        model = build_model(small_config(), seed=1)
        data = encode(model)
        (tmp_path / "t.oto").write_bytes(data[:40])
        with pytest.raises(WeightsError, match="stem.weight"):
            load_weights(model, tmp_path / "t.oto")

    def test_bad_magic_and_trailing(self, tmp_path):
        model = build_model(small_config(), seed=1)
        (tmp_path / "m.oto").write_bytes(b"NOPE" + encode(model)[4:])
        with pytest.raises(WeightsError, match="magic"):
            load_weights(model, tmp_path / "m.oto")
        (tmp_path / "e.oto").write_bytes(encode(model) + b"\x00")
        with pytest.raises(WeightsError, match="trailing"):
            load_weights(model, tmp_path / "e.oto")


class TestConfig:
    def test_parse(self):
        cfg = parse_config("""
            # architecture
            branch_kinds = RD
            fusion = Linear      # trailing comment
            channels = 8
            single_branch_ablation = none
            max_iters = 50
            rotations = 90, 180
            codec = spiht
        """)
        assert cfg.model.branch_kinds == [UnitKind.RES, UnitKind.DENSE]
        assert cfg.model.fusion is FusionKind.LINEAR and cfg.model.channels == 8
        assert cfg.train.max_iters == 50
        assert tuple(cfg.data.rotations) == (90, 180) and cfg.data.codec == "spiht"

    def test_round_trip(self, tmp_path):
        cfg = parse_config("branch_kinds = RRR\nfusion = sum\nlr0 = 0.5\npatch_size = 24\n")
        (tmp_path / "c.cfg").write_text(dump_config(cfg))
        assert load_config(tmp_path / "c.cfg") == cfg
        assert parse_config(dump_config(RunConfig())) == RunConfig()

    @pytest.mark.parametrize("text, where", [("bogus = 1", ":1"), ("\nchannels = many", ":2"), ("channels 8", ":1"),
                                             ("fusion = cubic", ":1")])
    def test_errors_carry_line(self, text, where):
        with pytest.raises(ConfigError, match=where):
            parse_config(text, "run.cfg")
