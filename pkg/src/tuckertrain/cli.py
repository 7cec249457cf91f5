"""Command-line interface.

Subcommands: train, decompose, evaluate, estimate, plot, make-data.
Exit codes: 0 success, 2 configuration error, 3 data/format error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, FormatError
from .experiment import decompose_convs, estimate_convs, run_experiment
from .nn import evaluate as evaluate_model
from .report import layer_table, render_accuracy_figure
from .synth import write_cifar10_corpus, write_mnist_corpus


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    report = run_experiment(cfg)
    print(f"run complete: {cfg.epochs} epochs of {cfg.model} on {cfg.dataset}")
    print(f"final test accuracy: {report.final_accuracy:.4f}")
    print(f"parameters: {report.params_initial} -> {report.params_final}")
    for phase, seconds in report.phase_train_seconds.items():
        print(f"train time [{phase}]: {seconds:.1f}s")
    if report.layer_reports:
        print(layer_table(report.layer_reports))
    print(f"artifacts in {cfg.output_dir}/")
    return 0


def _cmd_decompose(args) -> int:
    ck = load_checkpoint(args.checkpoint_in)
    reports = decompose_convs(ck.model, min_channels=args.min_channels,
                              min_compression=args.min_compression)
    print(layer_table(reports))
    if all(r.skipped is not None for r in reports):
        print("warning: no layer was eligible; output model equals input", file=sys.stderr)
    save_checkpoint(args.checkpoint_out, ck.model, epoch=ck.epoch, rng=ck.rng)
    print(f"wrote {args.checkpoint_out}")
    return 0


def _cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config)
    from .experiment import _load_datasets

    _, test = _load_datasets(cfg)
    ck.model.set_threads(cfg.threads)
    acc = evaluate_model(ck.model, test.images, test.labels)
    ck.model.set_threads(1)
    print(f"test accuracy: {acc:.4f} ({test.n} samples)")
    return 0


def _cmd_estimate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    print(layer_table(estimate_convs(ck.model, min_channels=args.min_channels,
                                     min_compression=args.min_compression)))
    return 0


def _cmd_plot(args) -> int:
    if len(args.paths) < 2:
        raise ConfigError("plot needs at least one CSV and an output SVG path")
    *csvs, out = args.paths
    render_accuracy_figure(csvs, out)
    print(f"wrote {out}")
    return 0


def _cmd_make_data(args) -> int:
    if args.dataset == "cifar10":
        write_cifar10_corpus(args.dir, n_train=args.train, n_test=args.test, seed=args.seed)
    else:
        write_mnist_corpus(args.dir, n_train=args.train, n_test=args.test, seed=args.seed)
    print(f"wrote synthetic {args.dataset} corpus ({args.train} train / {args.test} test) to {args.dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuckertrain",
        description="Train CNNs faster by factorizing convolutions mid-training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("decompose", help="factorize a trained checkpoint's convolutions")
    p.add_argument("checkpoint_in")
    p.add_argument("checkpoint_out")
    p.add_argument("--min-channels", type=int, default=16)
    p.add_argument("--min-compression", type=float, default=1.05)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint on a config's test split")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("estimate", help="per-layer compression/speedup table for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--min-channels", type=int, default=16)
    p.add_argument("--min-compression", type=float, default=1.05)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("plot", help="render metrics CSVs to an SVG accuracy timeline")
    p.add_argument("paths", nargs="+", metavar="csv... out.svg")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("make-data", help="write a synthetic corpus in CIFAR-10/MNIST format")
    p.add_argument("dir")
    p.add_argument("--dataset", choices=["cifar10", "mnist"], default="cifar10")
    p.add_argument("--train", type=int, default=10_000)
    p.add_argument("--test", type=int, default=2_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_data)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    np.seterr(over="ignore")  # float32 training can transiently saturate
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
