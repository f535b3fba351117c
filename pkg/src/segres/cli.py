"""Command-line interface: synth, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 runtime/data error, 2 usage error, 3 verification
failure. Every subcommand accepts ``--config FILE`` with ``key = value``
lines (``#`` comments); explicit command-line flags take precedence and
unknown keys are rejected.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    colorize_labels,
    default_palette,
    load_checkpoint,
    load_dataset,
    load_image_ppm,
    save_checkpoint,
    save_dataset,
    save_labels_pgm,
    save_image_ppm,
    split,
)
from .gradcheck import DEFAULT_EPS, DEFAULT_TOL, LAYER_CHECKS, run_checks
from .metrics import format_iou_report
from .network import ArchConfig, build_baseline, build_improved
from .synth import SynthConfig, generate_synthetic
from .tensor import Rng
from .training import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="segres", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"segres {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=_positive_int, default=10)
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--classes", type=_positive_int, default=2)
    p.add_argument("--fg-rate", type=float, default=0.2, help="target foreground pixel fraction")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    subparsers["synth"] = p

    p = sub.add_parser("train", help="train a network on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=("improved", "baseline"), default="improved")
    p.add_argument("--loss", choices=("ce", "bce"), default="ce")
    p.add_argument("--beta", type=float, default=0.75)
    p.add_argument("--epochs", type=_positive_int, default=210)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=_positive_int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--train-fraction", type=float, default=0.8, help="share of the dataset used for training")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", required=True, help="history CSV path")
    subparsers["train"] = p

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True, help="per-class IoU report path")
    subparsers["eval"] = p

    p = sub.add_parser("predict", help="segment one PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="label map PGM path")
    p.add_argument("--color", default=None, help="optional colorized PPM path")
    subparsers["predict"] = p

    p = sub.add_parser("gradcheck", help="finite-difference verification of all backward passes")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--layer", default=None, choices=sorted(LAYER_CHECKS) + ["network"])
    subparsers["gradcheck"] = p

    for sp in subparsers.values():
        sp.add_argument("--config", default=None, help="key = value defaults file")
    return parser, subparsers


def _read_config(path: str, sp: argparse.ArgumentParser) -> dict:
    actions = {}
    for action in sp._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                actions[opt[2:]] = action
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        sp.error(f"cannot read config file: {e}")
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            sp.error(f"config line {ln} is not 'key = value': {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in actions or key == "config":
            sp.error(f"unknown config key {key!r}")
        action = actions[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if value.lower() not in ("true", "false"):
                sp.error(f"config key {key!r} expects true/false, got {value!r}")
            values[action.dest] = value.lower() == "true"
        else:
            values[action.dest] = value  # strings get re-run through the action's type
    return values


def _apply_config(args, argv, parser, subparsers):
    if getattr(args, "config", None) is None:
        return args
    sp = subparsers[args.command]
    sp.set_defaults(**_read_config(args.config, sp))
    return parser.parse_args(argv)


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(
            count=args.count,
            size=args.size,
            class_count=args.classes,
            foreground_rate=args.fg_rate,
            noise=args.noise,
            seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e))
    ds = generate_synthetic(cfg)
    save_dataset(ds, args.out)
    realized = float(np.mean([(s.labels != 0).mean() for s in ds]))
    print(f"wrote {len(ds)} samples to {args.out} (foreground fraction {realized:.4f})")
    return EXIT_OK


def cmd_train(args) -> int:
    if not 0.0 < args.train_fraction < 1.0:
        raise UsageError(f"--train-fraction must lie in (0, 1), got {args.train_fraction}")
    try:
        tcfg = TrainConfig(
            learning_rate=args.lr,
            momentum=args.momentum,
            epoch_limit=args.epochs,
            batch_size=args.batch,
            seed=args.seed,
            loss="balanced" if args.loss == "bce" else "standard",
            beta=args.beta,
            shuffle=not args.no_shuffle,
            checkpoint_every=args.checkpoint_every,
            checkpoint_path=args.out,
        )
    except ValueError as e:
        raise UsageError(str(e))
    ds = load_dataset(args.data)
    if len(ds) < 2:
        train_set = val_set = ds
    else:
        train_set, val_set = split(ds, args.train_fraction, args.seed)
    acfg = ArchConfig(class_count=ds.class_count, desk_scale=(args.scale == "desk"))
    build = build_improved if args.arch == "improved" else build_baseline
    net = build(acfg, Rng(args.seed))
    net, history = train(net, train_set, val_set, tcfg)
    save_checkpoint(net, args.out)
    history.save_csv(args.history)
    print(f"final validation mIoU {history.records[-1].val_miou:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    net = load_checkpoint(args.model)
    if net.cfg.class_count != ds.class_count:
        raise RuntimeError(
            f"checkpoint has {net.cfg.class_count} classes but dataset declares {ds.class_count}"
        )
    report = evaluate(net, ds)
    text = format_iou_report(report.per_class_iou)
    Path(args.report).write_text(text, encoding="utf-8")
    print(f"mIoU {report.mean_iou:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    image = load_image_ppm(args.image)
    net = load_checkpoint(args.model)
    prob = net.forward(image[None], training=False)
    labels = prob.argmax(axis=1)[0]
    save_labels_pgm(args.out, labels)
    if args.color:
        save_image_ppm(args.color, colorize_labels(labels, default_palette(net.cfg.class_count)))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.eps <= 0 or args.tol <= 0:
        raise UsageError("--eps and --tol must be positive")
    results = run_checks(eps=args.eps, only=args.layer)
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        status = "ok" if err < args.tol else "FAIL"
        print(f"{status:4s} {name:35s} {err:.3e}")
    print(f"worst {worst:.3e} (tolerance {args.tol:.1e})")
    return EXIT_OK if worst < args.tol else EXIT_VERIFY


class UsageError(Exception):
    pass


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(args, argv, parser, subparsers)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - CLI boundary maps failures to exit 1
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
