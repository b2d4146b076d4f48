import csv

import numpy as np
import pytest

from oto.cli import main
from oto.codecs import make_codec
from oto.config import RunConfig, dump_config, parse_config
from oto.imageio import load_luma
from oto.metrics import psnr, read_report_csv
from oto.net import OtoConfig, build_model
from oto.weights import save_weights

TINY = """
channels = 4
units_per_branch = 1
tail_resunits = 1
desk_scale = true
max_iters = 300
eval_every = 100
output_init_scale = 0.01
patch_size = 24
stride = 12
"""


@pytest.fixture
def corpus(tmp_path):
    assert main(["synth", "--kind", "mixed", "--count", "4", "--size", "64", "--seed", "3", "--out", str(tmp_path / "clean")]) == 0
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_writes_pgms(corpus):
    files = sorted((corpus / "clean").iterdir())
    assert [f.name for f in files] == [f"mixed_{i:03d}.pgm" for i in range(4)]
    assert load_luma(files[0]).shape == (64, 64)


def test_compress_then_eval_matches_library(corpus):
    assert run("compress", "--codec", "jpeg", "--quality", 10, "--in", corpus / "clean", "--out", corpus / "jpeg") == 0
    assert run("eval", "--clean", corpus / "clean", "--test", corpus / "jpeg", "--out", corpus / "r.csv",
               "--plot", corpus / "r.png") == 0
    reports = {r.name: r for r in read_report_csv(corpus / "r.csv")}
    for path in sorted((corpus / "clean").iterdir()):
        clean = load_luma(path)
        expected = psnr(clean, np.round(make_codec("jpeg", 10)(clean)))
        assert reports[path.stem].psnr == pytest.approx(expected, abs=1e-6)
    assert (corpus / "r.png").stat().st_size > 0
    with open(corpus / "jpeg" / "rate.csv") as fh:
        assert next(csv.reader(fh)) == ["name", "codec", "setting", "bits", "bpp"]


def test_spiht_rate_column(corpus):
    assert run("compress", "--codec", "spiht", "--ratio", 32, "--in", corpus / "clean", "--out", corpus / "sp") == 0
    with open(corpus / "sp" / "rate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["bpp"]) <= 8 / 32 + 1e-9 for r in rows)


def test_identity_restore_is_byte_exact(corpus):
    cfg = OtoConfig(channels=4, units_per_branch=1, tail_resunits=1)
    weights = corpus / "id.oto"
    save_weights(build_model(cfg).zero_residual(), weights)
    (corpus / "id.cfg").write_text(dump_config(RunConfig(model=cfg)))
    assert run("restore", "--weights", weights, "--config", corpus / "id.cfg", "--in", corpus / "clean", "--out", corpus / "out") == 0
    for path in (corpus / "clean").iterdir():
        assert (corpus / "out" / path.name).read_bytes() == path.read_bytes()


def test_train_restore_improves_and_is_deterministic(corpus):
    run("synth", "--count", "3", "--seed", "4", "--out", corpus / "val")
    (corpus / "tiny.cfg").write_text(TINY)
    for name in ("a", "b"):
        assert run("train", "--config", corpus / "tiny.cfg", "--train", corpus / "clean", "--val", corpus / "val",
                   "--out", corpus / f"{name}.oto") == 0
    for suffix in ("", ".log", ".cfg", ".val.csv"):
        assert (corpus / f"a.oto{suffix}").read_bytes() == (corpus / f"b.oto{suffix}").read_bytes()
    assert (corpus / "a.oto.png").stat().st_size > 0
    assert (corpus / "a.oto.log").read_text().startswith("iter,lr,loss,alpha\n")

    run("compress", "--codec", "jpeg", "--quality", 10, "--in", corpus / "val", "--out", corpus / "vjpeg")
    assert run("restore", "--weights", corpus / "a.oto", "--in", corpus / "vjpeg", "--out", corpus / "vout") == 0
    run("eval", "--clean", corpus / "val", "--test", corpus / "vjpeg", "--out", corpus / "before.csv")
    run("eval", "--clean", corpus / "val", "--test", corpus / "vout", "--out", corpus / "after.csv")
    before, after = read_report_csv(corpus / "before.csv")[-1], read_report_csv(corpus / "after.csv")[-1]
    assert after.psnr > before.psnr


def test_errors_exit_one(corpus, capsys):
    assert run("eval", "--clean", corpus / "nowhere", "--test", corpus / "clean", "--out", corpus / "x.csv") == 1
    assert "error" in capsys.readouterr().err
    assert run("compress", "--codec", "jpeg", "--in", corpus / "clean", "--out", corpus / "j") == 1
    assert run("restore", "--weights", corpus / "missing.oto", "--in", corpus / "clean", "--out", corpus / "o") == 1

    save_weights(build_model(OtoConfig(channels=4, units_per_branch=1, tail_resunits=1)), corpus / "w.oto")
    (corpus / "other.cfg").write_text("channels = 8\n")
    assert run("restore", "--weights", corpus / "w.oto", "--config", corpus / "other.cfg",
               "--in", corpus / "clean", "--out", corpus / "o") == 1
    assert "digest" in capsys.readouterr().err

    (corpus / "bad.cfg").write_text("channels = 4\nlearning_rate = 3\n")
    assert run("train", "--config", corpus / "bad.cfg", "--train", corpus / "clean", "--out", corpus / "t.oto") == 1
    assert "bad.cfg:2" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "8/8 checks passed" in out


def test_desk_scale_key_applies_preset():
    cfg = parse_config("desk_scale = true\nmax_iters = 300\n")
    assert (cfg.train.max_iters, cfg.train.batch_size) == (300, 8)
