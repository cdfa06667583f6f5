"""Command-line entry point: ``gasl {train,eval,prune,report,verify,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data or format error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import checkpoint, checks, config as cfgmod, pruning
from .data import load_mnist
from .errors import DataError, FormatError, GaslError, NumericalError, ParameterError
from .fileio import atomic_write
from .nn import build
from .optim import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
SWEEP_ALPHAS = (0.01, 0.1, 1.0, 10.0, 100.0)
DATA_ENV = "GASL_DATA_DIR"

log = logging.getLogger("gasl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--arch", choices=("mlp", "lenet"))
    p.add_argument("--lambda-s", type=float, dest="lambda_s")
    p.add_argument("--alpha", type=float)
    p.add_argument("--gasl", choices=("on", "off"))
    p.add_argument("--attention", choices=("structured", "unstructured", "none"))
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set train.max_epochs=3")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def make_parser():
    parser = _Parser(prog="gasl", description="Group-sparse network training toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common_flags()
    sub.add_parser("train", parents=[common], help="train and write checkpoint + epoch log")
    p = sub.add_parser("eval", parents=[common], help="error rate of a checkpoint on a split")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p = sub.add_parser("prune", parents=[common], help="prune a checkpoint and write a sparsity report")
    p.add_argument("--checkpoint")
    p.add_argument("--cascade", action="store_true")
    p = sub.add_parser("report", parents=[common], help="print a sparsity report as a table")
    p.add_argument("--report", dest="report_path")
    p.add_argument("--method", default="model")
    p = sub.add_parser("verify", parents=[common], help="run the gradient and identity self-checks")
    p.add_argument("--quick", action="store_true", help="smaller instance counts")
    sub.add_parser("sweep", parents=[common], help="train+prune over the alpha grid")
    return parser


def _flag_overrides(args):
    out = {}
    for flag, key in (("arch", "arch"), ("lambda_s", "objective.lambda_s"), ("alpha", "objective.alpha"),
                      ("attention", "objective.attention"), ("seed", "seed"), ("data_dir", "data_dir"),
                      ("out", "out"), ("tau", "prune.tau")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    if getattr(args, "gasl", None) is not None:
        out["gasl.enabled"] = args.gasl == "on"
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args):
    """File values first, then flags; flags win."""
    overrides = _flag_overrides(args)
    if args.config:
        cfg = cfgmod.load(args.config, overrides)
    else:
        cfg = cfgmod.build_config({}, overrides)
    if not cfg.data_dir and os.environ.get(DATA_ENV):
        cfg = cfg.with_overrides({"data_dir": os.environ[DATA_ENV]})
    return cfg


def _data(cfg):
    cfg.check_paths(need_data=True)
    splits = load_mnist(cfg.data_dir, cfg.val_size)
    if cfg.arch == "mlp":
        splits = {k: v.flat() for k, v in splits.items()}
    return splits


def _net(cfg):
    kw = {"dense_grouping": cfg.dense_grouping} if cfg.dense_grouping else {}
    return build(cfg.arch, rng=cfg.seed, **kw)


def _paths(cfg):
    return {name: os.path.join(cfg.out, name) for name in
            ("model.ckpt", "epochs.jsonl", "config.txt", "pruned.ckpt", "report.json",
             "group_norms.csv", "sweep.json")}


class _LogBuffer:
    """Collects log lines and rewrites the log file atomically on each flush."""

    def __init__(self, path):
        self.path, self.lines = path, []

    def write(self, text):
        self.lines.append(text)

    def flush(self):
        atomic_write(self.path, "".join(self.lines))


def run_training(cfg, splits, log_path=None, ckpt_path=None):
    net = _net(cfg)
    stream = _LogBuffer(log_path) if log_path else None

    def checkpoint_epoch(net_, rec):
        if ckpt_path:
            checkpoint.save(net_, ckpt_path)

    net, records = train(net, splits["train"], cfg.objective, cfg.gasl, cfg.train,
                         eval_data=splits["val"], log_file=stream, on_epoch=checkpoint_epoch)
    return net, records


def cmd_train(cfg, args):
    splits = _data(cfg)
    paths = _paths(cfg)
    atomic_write(paths["config.txt"], cfg.dumps())
    net, records = run_training(cfg, splits, paths["epochs.jsonl"], paths["model.ckpt"])
    checkpoint.save(net, paths["model.ckpt"])
    err = net.error_rate(splits["test"].images, splits["test"].labels)
    print(json.dumps({"epochs": len(records), "test_error_pct": err, "checkpoint": paths["model.ckpt"]},
                     sort_keys=True))
    return EXIT_OK


def cmd_eval(cfg, args):
    net = checkpoint.load(args.checkpoint or _paths(cfg)["model.ckpt"])
    split = _data(cfg)[args.split]
    print(json.dumps({"split": args.split, "error_pct": net.error_rate(split.images, split.labels)},
                     sort_keys=True))
    return EXIT_OK


def prune_and_report(cfg, net, test, cascade=False):
    prune_cfg = cfg.prune if not cascade else pruning.PruneConfig(cfg.prune.tau, cfg.prune.mode, True)
    pruned, report = pruning.prune_groups(net, prune_cfg)
    # measured on the pruned network, never carried over
    report.eval_error_pct = pruned.error_rate(test.images, test.labels)
    return pruned, report


def cmd_prune(cfg, args):
    paths = _paths(cfg)
    net = checkpoint.load(args.checkpoint or paths["model.ckpt"])
    test = _data(cfg)["test"]
    pruned, report = prune_and_report(cfg, net, test, args.cascade or cfg.prune.cascade)
    checkpoint.save(pruned, paths["pruned.ckpt"])
    atomic_write(paths["report.json"], report.to_json() + "\n")
    pruning.write_group_norms_csv(pruned, paths["group_norms.csv"])
    print(report.table())
    return EXIT_OK


def cmd_report(cfg, args):
    path = args.report_path or _paths(cfg)["report.json"]
    try:
        with open(path, encoding="utf-8") as f:
            report = pruning.SparsityReport.from_json(f.read())
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc.strerror}") from None
    except (ValueError, TypeError) as exc:
        raise FormatError(f"malformed report {path}: {exc}") from None
    print(report.table(args.method))
    print("layers: " + ", ".join(f"{n} {p}/{t} groups pruned" for n, p, t in
                                 zip(report.layer_names, report.groups_pruned, report.groups_total)))
    return EXIT_OK


def cmd_verify(cfg, args):
    if args.quick:
        results = checks.run_all(cfg.seed, n_gradient=10, n_decomposition=10, n_gasl=100, n_pruning=10)
    else:
        results = checks.run_all(cfg.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("verify: " + ("all checks passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_sweep(cfg, args):
    splits = _data(cfg)
    rows = []
    for alpha in SWEEP_ALPHAS:
        run_cfg = cfg.with_overrides({"objective.alpha": alpha})
        net, records = run_training(run_cfg, splits)
        _, report = prune_and_report(run_cfg, net, splits["test"])
        rows.append({"alpha": alpha, "error_pct": report.eval_error_pct,
                     "sparsity_pct": report.total_sparsity_pct,
                     "per_layer_sparsity_pct": report.per_layer_sparsity_pct,
                     "flop_ratio": report.flop_ratio, "epochs": len(records)})
        log.info("alpha %g: error %.2f%%", alpha, report.eval_error_pct)
    atomic_write(_paths(cfg)["sweep.json"], json.dumps({"lambda_s": cfg.objective.lambda_s, "rows": rows},
                                                       sort_keys=True, indent=2) + "\n")
    print(f"{'alpha':>8} {'Error(%)':>9} {'Sparsity(%)':>12} {'flop_ratio':>11}")
    for r in rows:
        print(f"{r['alpha']:>8g} {r['error_pct']:>9.2f} {r['sparsity_pct']:>12.1f} {r['flop_ratio']:>11.2f}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "prune": cmd_prune, "report": cmd_report,
            "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None):
    try:
        args = make_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"gasl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"gasl: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, NumericalError) as exc:
        print(f"gasl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GaslError as exc:
        print(f"gasl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
