"""Command-line entry point.

Exit codes: 0 success, 2 usage/config, 3 I/O, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checkpoint, detect, netpbm, synth
from .config import KEYS, ConfigError, RunConfig
from .model import Model, cam
from .train import TrainState, TrainingDiverged, evaluate, train, write_metrics_csv
from .transforms import resize_bilinear

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("mgfa")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    g = p.add_argument_group("config keys")
    for key in KEYS:
        names = [f"--{key.replace('_', '-')}"]
        if "_" in key:
            names.append(f"--{key}")
        g.add_argument(*names, dest=key, default=argparse.SUPPRESS, metavar="V")


def _run_config(args) -> RunConfig:
    flags = {k: getattr(args, k) for k in KEYS if hasattr(args, k)}
    try:
        return RunConfig.load(args.config, flags)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from None


def _manifest(path):
    try:
        return synth.read_manifest(path)
    except synth.ManifestError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read manifest: {exc}") from None


def _load_split(manifest, split):
    try:
        return synth.load_split(manifest, split)
    except (OSError, netpbm.NetpbmError) as exc:
        raise CliError(EXIT_IO, f"cannot load images: {exc}") from None
    except synth.ManifestError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_model(path):
    try:
        return checkpoint.load_model(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint: {exc}") from None
    except checkpoint.CheckpointError as exc:
        raise CliError(EXIT_IO, f"bad checkpoint {path}: {exc}") from None


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    samples = synth.generate(cfg.synth())
    try:
        path = synth.write_dataset(samples, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset: {exc}") from None
    print(f"wrote {len(samples)} samples to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = _manifest(args.manifest)
    samples = _load_split(manifest, "train")
    if not samples:
        raise CliError(EXIT_CONFIG, "manifest has no train records")
    k = max(r.label for r in manifest.records) + 1
    try:
        model = Model.init(cfg.backbone(num_classes=k), seed=cfg["seed"])
        tcfg = cfg.train()
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    state = TrainState.fresh(tcfg.seed)

    def report(m, _state):
        log.info("epoch %d lr %g loss %.5f ce %.5f acc %.3f", m.epoch, m.lr, m.loss_total, m.loss_ce, m.train_acc)

    try:
        history = train(tcfg, samples, model, state, on_epoch=report)
    except TrainingDiverged as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    try:
        checkpoint.save_checkpoint(model, state, args.out)
        if args.metrics:
            write_metrics_csv(args.metrics, history)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs: {exc}") from None
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = _load_model(args.checkpoint)
    manifest = _manifest(args.manifest)
    samples = _load_split(manifest, args.split)
    if not samples:
        raise CliError(EXIT_CONFIG, f"manifest has no {args.split} records")
    print(f"top1={evaluate(samples, model):.6f}")
    return EXIT_OK


def cmd_detect_eval(args) -> int:
    try:
        dets = detect.read_detections(args.detections)
        gts = detect.read_ground_truth(args.ground_truth)
    except detect.DetectionFileError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        aps, m = detect.evaluate_detections(dets, gts, args.iou)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for cls, ap in aps.items():
        print(f"ap_{cls}={ap:.6f}")
    print(f"map={m:.6f}")
    return EXIT_OK


def cmd_cam(args) -> int:
    model, _ = _load_model(args.checkpoint)
    try:
        image = netpbm.read_image(args.image)
    except (OSError, netpbm.NetpbmError) as exc:
        raise CliError(EXIT_IO, f"cannot read image: {exc}") from None
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    s = model.config.input_size
    x = resize_bilinear(image, s, s).transpose(2, 0, 1)
    try:
        heat = cam(x, args.class_id, model)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        netpbm.write_image(args.out, heat)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write heatmap: {exc}") from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgfa", description="mask-guided attention toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic leaf dataset")
    p.add_argument("--out", default="data", help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on the manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch CSV path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect-eval", help="per-class AP and mAP of region detections")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_detect_eval)

    p = sub.add_parser("cam", help="write a class activation map as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cam)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
