"""Command-line entry point: ``oto {synth,compress,train,restore,eval,selftest}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from oto import imageio
from oto.codecs import make_codec, spiht_compress_image_with_rate
from oto.codecs.spiht import SpihtParams
from oto.config import RunConfig, dump_config, load_config
from oto.data import KINDS, PairDataset, make_synthetic_corpus
from oto.metrics import MetricsConfig, evaluate_pair, mean_report, write_report_csv
from oto.net import ConfigError, OtoConfig, build_model
from oto.train import TrainingDiverged, evaluate, restore_image, train
from oto.weights import WeightsError, load_weights, save_weights

log = logging.getLogger("oto")


class CliError(Exception):
    pass


def _load_folder(folder) -> dict[str, np.ndarray]:
    paths = imageio.list_images(folder)
    if not paths:
        raise CliError(f"no .pgm/.ppm images in {folder}")
    return {p.stem: imageio.load_luma(p) for p in paths}


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sidecar(weights: Path, suffix: str) -> Path:
    return weights.with_name(weights.name + suffix)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> None:
    out = _out_dir(args.out)
    for i, img in enumerate(make_synthetic_corpus(args.kind, args.count, args.size, args.seed)):
        imageio.write_pgm(out / f"{args.kind}_{i:03d}.pgm", img)
    log.info("wrote %d images to %s", args.count, out)


def cmd_compress(args) -> None:
    setting = args.quality if args.codec == "jpeg" else args.ratio
    if setting is None:
        raise CliError(f"--codec {args.codec} needs {'--quality' if args.codec == 'jpeg' else '--ratio'}")
    images = _load_folder(args.inp)
    out = _out_dir(args.out)
    codec = make_codec(args.codec, setting)
    rows = []
    for name, img in images.items():
        if args.codec == "spiht":
            deg, rate = spiht_compress_image_with_rate(img, SpihtParams(setting))
            rows.append([name, rate["bits"], f"{rate['bpp']:.6f}"])
        else:
            deg = codec(img)
            rows.append([name, "", ""])
        imageio.write_pgm(out / f"{name}.pgm", deg)
    with open(out / "rate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "codec", "setting", "bits", "bpp"])
        for name, bits, bpp in rows:
            writer.writerow([name, args.codec, setting, bits, bpp])
    log.info("compressed %d images with %s %s into %s", len(images), args.codec, setting, out)


def _pairs(folder, cfg: RunConfig) -> PairDataset:
    images = _load_folder(folder)
    setting = cfg.data.quality if cfg.data.codec == "jpeg" else cfg.data.ratio
    codec = make_codec(cfg.data.codec, setting)
    names = list(images)
    clean = [images[n] for n in names]
    return PairDataset([codec(c) for c in clean], clean, names)


def cmd_train(args) -> None:
    from oto.plotting import plot_training

    cfg = load_config(args.config) if args.config else RunConfig()
    weights = Path(args.out)
    weights.parent.mkdir(parents=True, exist_ok=True)
    train_set = _pairs(args.train, cfg)
    val_set = _pairs(args.val, cfg) if args.val else None
    patches = train_set.patches(cfg.data.patch_spec(), seed=cfg.train.seed)
    log.info("%s: %d training patches of %d px", cfg.model.name, len(patches[0]), cfg.data.patch_size)
    model = build_model(cfg.model, seed=cfg.train.seed)
    mcfg = MetricsConfig(block_size=cfg.data.block_size)
    log_path = _sidecar(weights, ".log")
    with open(log_path, "w") as fh:
        fh.write("iter,lr,loss,alpha\n")
        try:
            model, state = train(model, patches, cfg.train, val=val_set, metrics_config=mcfg, log=fh)
        except TrainingDiverged as exc:
            raise CliError(f"{exc}; non-finite parameters: {exc.snapshot['nonfinite_params'][:5]}") from None
    save_weights(model, weights)
    _sidecar(weights, ".cfg").write_text(dump_config(cfg))
    plot_training(_sidecar(weights, ".png"), state.loss_history, state.alpha_history, state.val_history, cfg.model.name)
    if val_set is not None:
        restored, baseline = evaluate(model, val_set, mcfg)
        write_report_csv(_sidecar(weights, ".val.csv"), restored)
        log.info(
            "validation PSNR %.3f dB (compressed %.3f dB), best at iteration %s",
            mean_report(restored).psnr, mean_report(baseline).psnr, state.best_iter,
        )
    log.info("saved %s", weights)


def _model_config(weights: Path, config_arg) -> OtoConfig:
    if config_arg:
        return load_config(config_arg).model
    side = _sidecar(weights, ".cfg")
    if side.exists():
        return load_config(side).model
    return OtoConfig()


def cmd_restore(args) -> None:
    weights = Path(args.weights)
    if not weights.is_file():
        raise CliError(f"weights file {weights} not found")
    model = load_weights(build_model(_model_config(weights, args.config)), weights)
    out = _out_dir(args.out)
    images = _load_folder(args.inp)
    for name, img in images.items():
        imageio.write_pgm(out / f"{name}.pgm", restore_image(model, img))
    log.info("restored %d images into %s", len(images), out)


def cmd_eval(args) -> None:
    clean = _load_folder(args.clean)
    test = _load_folder(args.test)
    missing = sorted(set(clean) - set(test))
    if missing:
        raise CliError(f"{len(missing)} clean images have no counterpart in {args.test}: {missing[:3]}")
    mcfg = MetricsConfig(block_size=args.block_size)
    reports = [evaluate_pair(clean[n], test[n], mcfg, n) for n in clean]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_csv(out, reports)
    if args.plot:
        from oto.plotting import plot_reports

        plot_reports(args.plot, reports)
    m = mean_report(reports)
    log.info("mean PSNR %.3f dB, PSNR-B %.3f dB, SSIM %.4f over %d images", m.psnr, m.psnr_b, m.ssim, len(reports))


def cmd_selftest(args) -> int:
    from oto.selftest import run_selftest

    failures = run_selftest(print)
    return 1 if failures else 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oto", description="Compressed-image restoration toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic luma corpus as PGM files")
    s.add_argument("--kind", choices=KINDS, default="mixed")
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("compress", help="degrade images with a codec")
    s.add_argument("--codec", choices=("jpeg", "spiht"), required=True)
    s.add_argument("--quality", type=int, help="JPEG quality factor")
    s.add_argument("--ratio", type=int, help="SPIHT compression ratio")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("train", help="train a restoration model on clean images")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--train", required=True, help="folder of clean training images")
    s.add_argument("--val", help="folder of clean validation images")
    s.add_argument("--out", required=True, help="weights file to write")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("restore", help="restore degraded images with trained weights")
    s.add_argument("--weights", required=True)
    s.add_argument("--config", help="architecture config (default: the .cfg next to the weights)")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_restore)

    s = sub.add_parser("eval", help="PSNR / PSNR-B / SSIM report")
    s.add_argument("--clean", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--block-size", type=int, default=8)
    s.add_argument("--out", required=True, help="CSV report path")
    s.add_argument("--plot", help="optional PNG bar chart")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="gradient checks, codec round trips and metric oracles")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        status = args.func(args)
    except (CliError, ConfigError, WeightsError, imageio.ImageFormatError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"oto {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
