"""Command-line entry point: ``rramnet <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error (missing or corrupt
files, bad checkpoints), 3 numerical failure (non-finite loss, failed
gradient check).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from . import data, experiments
from .nn import CheckpointError
from .trainer import NumericalError, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _k_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _common(p):
    p.add_argument("--config", help="INI file; keys of its [rramnet] section set option defaults")
    p.add_argument("--preset", choices=sorted(experiments.PRESETS), default="shallow-mnist")
    p.add_argument("--scale", choices=["desk", "paper"], default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", help="dataset root (default $RRAMNET_DATA_DIR or ~/.cache/rramnet)")
    p.add_argument("--cache-dir", help="where trained runs are cached")
    p.add_argument("--out", default="runs", help="output directory or file")


def _schedule(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--lr-drop-epoch", type=int, help="epochs before switching to --lr-after")
    p.add_argument("--lr-after", type=float, help="learning rate after the drop")
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rramnet",
                     description="Crossbar inference simulation and device-aware MLP training.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fetch", help="download and verify datasets")
    p.add_argument("datasets", nargs="*", default=["mnist", "cifar10"],
                   choices=["mnist", "cifar10"])
    p.add_argument("--data-dir")

    p = sub.add_parser("train", help="train one network, write checkpoint and history CSV")
    _common(p)
    _schedule(p)
    p.add_argument("--transfer", choices=["linear", "sinh", "complex"], default="linear")
    p.add_argument("--k", type=float, default=7.5, help="device nonlinearity for --transfer sinh")

    p = sub.add_parser("sweep-naive", help="naive-mapping accuracy of a linear checkpoint over k")
    _common(p)
    _schedule(p)
    p.add_argument("--checkpoint", help="linear-transfer checkpoint (trained if omitted)")
    p.add_argument("--k-list", type=_k_list, default=experiments.DEFAULT_K_LIST)

    p = sub.add_parser("sweep-proposed", help="train sinh networks per k, evaluate on crossbars")
    _common(p)
    _schedule(p)
    p.add_argument("--k-list", type=_k_list, default=experiments.DEFAULT_K_LIST)

    p = sub.add_parser("hist", help="layer output histograms, ideal vs naive device")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, required=True, help="0-based weight matrix index")
    p.add_argument("--source", default="dataset", help="dataset, A or B")
    p.add_argument("--k", type=float, default=7.5)
    p.add_argument("--count", type=int, default=1000)

    p = sub.add_parser("table1", help="ideal / naive / proposed accuracy for the three networks")
    _common(p)
    p.add_argument("--k", type=float, default=7.5)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--transfer", choices=["linear", "sinh", "complex"], default="linear")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from ``--config`` so command-line flags win."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise UsageError(f"cannot read config file {path}")
    if "rramnet" not in cfg:
        raise UsageError(f"{path}: missing [rramnet] section")
    known = vars(args)
    defaults = {}
    for key, raw in cfg["rramnet"].items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("command", "config"):
            raise UsageError(f"{path}: unknown option {key!r}")
        defaults[dest] = raw
    # route the strings through argparse so types and choices are checked
    extra = []
    for dest, raw in defaults.items():
        flag = "--" + dest.replace("_", "-")
        if flag not in argv and not any(a.startswith(flag + "=") for a in argv):
            extra += [flag, raw]
    at = argv.index(args.command) + 1
    return parser.parse_args(argv[:at] + extra + argv[at:])


def _experiment(args, transfer="linear", k=7.5) -> experiments.ExperimentConfig:
    cfg = experiments.ExperimentConfig(preset=args.preset, scale=args.scale, transfer=transfer,
                                       k=k, out_dir=args.out, data_dir=args.data_dir,
                                       cache_dir=args.cache_dir, train=TrainConfig(seed=args.seed))
    overrides = {"epochs": getattr(args, "epochs", None),
                 "lr_initial": getattr(args, "lr", None),
                 "lr_after_drop": getattr(args, "lr_after", None),
                 "drop_epoch": getattr(args, "lr_drop_epoch", None),
                 "batch_size": getattr(args, "batch_size", None)}
    if overrides["epochs"] is not None and overrides["drop_epoch"] is None:
        overrides["drop_epoch"] = overrides["epochs"] * 16 // 30
    return experiments.with_defaults(cfg, **overrides)


def _progress(rec):
    print(f"epoch {rec.epoch:3d}  lr={rec.lr:g}  loss={rec.train_loss:.4f}  "
          f"test_acc={100 * rec.test_accuracy:.2f}%", flush=True)


def _run(args) -> int:
    if args.command == "fetch":
        for name in args.datasets:
            target = Path(args.data_dir) / name if args.data_dir else None
            for fname, path in data.fetch(name, target).items():
                print(f"{name}: {path} ok")
        return EXIT_OK

    if args.command == "gradcheck":
        report, ok = experiments.cmd_gradcheck(args.transfer, seed=args.seed)
        print(report)
        tol = experiments.GRADCHECK_TOL[args.transfer]
        print(f"{args.transfer}: {'PASS' if ok else 'FAIL'} (tolerance {tol:g})")
        return EXIT_OK if ok else EXIT_NUMERICAL

    if args.command == "train":
        cfg = _experiment(args, args.transfer, args.k)
        tag = "  [desk-scale substitute]" if "note" in cfg.meta() else ""
        print(f"training {cfg.preset} {'-'.join(map(str, cfg.layer_dims))} "
              f"transfer={cfg.transfer}{tag}")
        _, acc, paths = experiments.cmd_train(cfg, progress=_progress)
        print(f"final test accuracy: {100 * acc:.2f}%")
        for name, path in paths.items():
            print(f"{name}: {path}")
        return EXIT_OK

    if args.command == "sweep-naive":
        cfg = _experiment(args, "linear")
        test_set = experiments.load_split(cfg, "test")
        if args.checkpoint:
            model = args.checkpoint
        else:
            model, _ = experiments.trained_model(cfg, test_set=test_set, progress=_progress)
        out = Path(args.out) / "sweep_naive.csv"
        rows = experiments.cmd_sweep_naive(model, args.k_list, test_set, out, seed=args.seed,
                                           meta={"preset": cfg.preset, "scale": cfg.scale})
        for k, acc, loss in rows:
            print(f"k={k:g}  accuracy={100 * acc:.2f}%  normalized_loss={loss:.4f}")
        print(f"wrote {out}")
        return EXIT_OK

    if args.command == "sweep-proposed":
        cfg = _experiment(args, "linear")
        out = Path(args.out) / "sweep_proposed.csv"
        if args.lr is not None or args.lr_after is not None:
            fixed = (cfg.train.lr_initial, cfg.train.lr_after_drop)
            lr_for_k = lambda k: fixed  # noqa: E731
        else:
            lr_for_k = None
        rows = experiments.cmd_sweep_proposed(cfg, args.k_list, out, progress=_progress,
                                              lr_for_k=lr_for_k)
        for k, b, acc, _ in rows:
            print(f"k={k:g}  b={b:.4f}  crossbar accuracy={100 * acc:.2f}%")
        print(f"wrote {out}")
        return EXIT_OK

    if args.command == "hist":
        cfg = _experiment(args, "linear")
        test_set = experiments.load_split(cfg, "test") if args.source == "dataset" else None
        mad = experiments.cmd_hist(args.checkpoint, args.layer, args.source, args.out, k=args.k,
                                   count=args.count, seed=args.seed, test_set=test_set)
        print(f"mean absolute deviation device vs ideal: {mad:.6g}")
        print(f"wrote {Path(args.out) / 'hist.csv'} and {Path(args.out) / 'outputs.csv'}")
        return EXIT_OK

    if args.command == "table1":
        out = Path(args.out) / "table1.csv"
        rows = experiments.cmd_table1(out, scale=args.scale, k=args.k, seed=args.seed,
                                      data_dir=args.data_dir, cache_dir=args.cache_dir,
                                      progress=_progress)
        print(f"{'network':<15}{'dims':<32}{'ideal':>8}{'naive':>8}{'proposed':>10}")
        for name, dims, ideal, naive, prop in rows:
            print(f"{name:<15}{dims:<32}{ideal:8.2f}{naive:8.2f}{prop:10.2f}")
        if args.scale == "desk":
            print("deep-mnist and shallow-cifar rows use desk-scale substitute networks")
        print(f"wrote {out}")
        return EXIT_OK
    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except UsageError as exc:
        print(f"rramnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        print(f"rramnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataFormatError, data.FetchError, CheckpointError, FileNotFoundError) as exc:
        print(f"rramnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rramnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, IndexError) as exc:
        print(f"rramnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
