"""Command-line interface.

Subcommands:

    gen-data    write a synthetic shapes dataset (images, masks, manifest)
    train       run a training per config file / flags, emit a CSV report
    eval        evaluate a checkpoint's segmentation head on a dataset split
    transform   apply one pretext task to an image and dump the pair
    perms       print a jigsaw permutation catalogue

Exit codes: 0 on success, 1 on usage errors, 2 on data/config/format
errors. Config file keys and command-line flags share names; flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_model
from .config import TrainConfig, apply_overrides, load_config
from .data import generate_synthetic
from .errors import ConfigError, DataError, FormatError, NumericsError, StateError
from .metrics import write_iou_report
from .netpbm import read_ppm, write_pgm, write_ppm
from .pretext import PRETEXT_TASKS, PretextParams, build_catalogue, build_palette, make_sample
from .train import Trainer, evaluate


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="pretextseg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"pretextseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="generate a synthetic shapes dataset")
    gen.add_argument("--n", type=int, required=True, help="number of images")
    gen.add_argument("--classes", type=int, required=True, help="classes incl. background")
    gen.add_argument("--size", type=int, default=32, help="square image side (default 32)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--labeled-fraction", type=float, default=0.1)
    gen.add_argument("--val-fraction", type=float, default=0.2)

    tr = sub.add_parser("train", help="train per config; flags override file keys")
    tr.add_argument("--config", help="TOML config file")
    tr.add_argument("--out", default="report.csv", help="training report CSV path")
    tr.add_argument("--save", help="write a checkpoint here when done")
    tr.add_argument("--resume", help="resume an interrupted run from this checkpoint")
    tr.add_argument("--init-from", help="warm-start parameters from this checkpoint")
    for flag, kind in [
        ("--seed", int), ("--epochs", int), ("--eval-every", int),
        ("--steps-per-epoch", int), ("--dataset", str), ("--nb-classes", int),
        ("--batch-labeled", int),
        ("--batch-unlabeled", int), ("--tasks", str), ("--combine", str),
        ("--norm", str), ("--groups", int), ("--encoder-channels", str),
        ("--lr", float), ("--momentum", float), ("--decay-gamma", float),
        ("--decay-step", int), ("--inpaint-side", int), ("--inpaint-fill", float),
        ("--noise-sigma", float), ("--color-bins", int), ("--jigsaw-grid", int),
        ("--jigsaw-perms", int),
    ]:
        tr.add_argument(flag, type=kind, default=None)
    tr.add_argument("--sample-with-replacement", action="store_true", default=None)
    tr.add_argument("--switch-shared", action="store_true", default=None)
    tr.add_argument("--miou-include-absent", action="store_true", default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--model", required=True, help="checkpoint path")
    ev.add_argument("--data", required=True, help="dataset directory")
    ev.add_argument("--split", default="val", choices=("train", "val"))
    ev.add_argument("--include-absent", action="store_true",
                    help="score absent classes 0 instead of skipping them")
    ev.add_argument("--out", help="optional per-class IoU report CSV")

    tf = sub.add_parser("transform", help="apply one pretext task to an image")
    tf.add_argument("--task", required=True, choices=PRETEXT_TASKS)
    tf.add_argument("--in", dest="image", required=True, help="input PPM image")
    tf.add_argument("--seed", type=int, default=0)
    tf.add_argument("--out", required=True, help="output directory for the pair")
    tf.add_argument("--side", type=int, default=None, help="inpainting square side")
    tf.add_argument("--fill", type=float, default=0.5)
    tf.add_argument("--sigma", type=float, default=0.1)
    tf.add_argument("--bins", type=int, default=16)
    tf.add_argument("--grid", type=int, default=3)
    tf.add_argument("--count", type=int, default=64)

    pm = sub.add_parser("perms", help="print a jigsaw permutation catalogue")
    pm.add_argument("--grid", type=int, required=True)
    pm.add_argument("--count", type=int, required=True)
    pm.add_argument("--seed", type=int, default=0)

    return parser


_TRAIN_KEYS = (
    "seed", "epochs", "eval_every", "steps_per_epoch", "dataset", "nb_classes",
    "batch_labeled", "batch_unlabeled", "sample_with_replacement", "tasks",
    "combine", "norm", "groups", "encoder_channels", "switch_shared", "lr",
    "momentum", "decay_gamma", "decay_step", "inpaint_side", "inpaint_fill",
    "noise_sigma", "color_bins", "jigsaw_grid", "jigsaw_perms",
    "miou_include_absent",
)


def _cmd_gen_data(args) -> int:
    manifest = generate_synthetic(
        args.out, n=args.n, nb_classes=args.classes, size=(args.size, args.size),
        seed=args.seed, labeled_fraction=args.labeled_fraction,
        val_fraction=args.val_fraction,
    )
    labeled = len(manifest.labeled_train())
    print(
        f"wrote {args.n} images ({labeled} labeled train, "
        f"{len(manifest.unlabeled_train())} unlabeled train, "
        f"{len(manifest.val_entries())} val) to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    apply_overrides(cfg, {k: getattr(args, k) for k in _TRAIN_KEYS})
    trainer = Trainer(cfg)
    if args.resume:
        trainer.resume(args.resume)
    if args.init_from:
        loaded = trainer.warm_start(args.init_from)
        print(f"warm-started {len(loaded)} parameter tensors from {args.init_from}")
    report = trainer.run()
    report.to_csv(args.out)
    if args.save:
        trainer.save(args.save)
        print(f"checkpoint written to {args.save}")
    last = report.rows[-1] if report.rows else None
    if last is not None and last.val_miou is not None:
        print(f"epoch {last.epoch}: val_miou={last.val_miou:.4f} "
              f"val_pixacc={last.val_pixacc:.4f}")
    print(f"report written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_model(args.model)
    from .data import DatasetManifest

    manifest = DatasetManifest.load(args.data)
    result = evaluate(model, manifest, split=args.split,
                      include_absent=args.include_absent)
    print(f"miou={result.miou:.6f} pixel_acc={result.pixel_acc:.6f}")
    for k, iou in enumerate(result.iou):
        print(f"class {k}: iou={'absent' if iou is None else f'{iou:.6f}'}")
    if args.out:
        write_iou_report(args.out, result.confusion)
        print(f"report written to {args.out}")
    return 0


def _cmd_transform(args) -> int:
    img = read_ppm(args.image)
    params = PretextParams(
        inpaint_side=args.side, inpaint_fill=args.fill, noise_sigma=args.sigma,
        color_bins=args.bins, jigsaw_grid=args.grid, jigsaw_count=args.count,
    )
    if args.task == "colorization":
        params.palette = build_palette([img], nb_bins=args.bins)
    if args.task == "jigsaw":
        params.catalogue = build_catalogue(args.grid, args.count, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    sample = make_sample(args.task, img, params, rng)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if sample.input.shape[0] == 1:
        write_pgm(out / "input.pgm", np.floor(sample.input[0] * 255 + 0.5).astype(np.int64))
    else:
        write_ppm(out / "input.ppm", sample.input)
    if args.task == "jigsaw":
        (out / "target.txt").write_text(" ".join(map(str, sample.target.tolist())) + "\n")
    elif args.task == "colorization":
        write_pgm(out / "target.pgm", sample.target)
    else:
        write_ppm(out / "target.ppm", sample.target)
    (out / "meta.json").write_text(json.dumps(sample.meta, indent=1) + "\n")
    print(f"wrote {args.task} pair to {out}")
    return 0


def _cmd_perms(args) -> int:
    catalogue = build_catalogue(args.grid, args.count, seed=args.seed)
    for k, perm in enumerate(catalogue.perms):
        print(f"{k}: {' '.join(map(str, perm.tolist()))}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "transform": _cmd_transform,
    "perms": _cmd_perms,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataError, FormatError, StateError, NumericsError,
            ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
