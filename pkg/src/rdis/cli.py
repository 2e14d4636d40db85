"""Command-line entry point: ``rdis train | impute | sweep | report``.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 for runtime
failures (unreadable data, divergence, malformed result files).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .data import Normalizer, load_csv, split
from .ensemble import TrainData, ensemble_predict, load_ensemble, save_ensemble, train_rdi
from .errors import ConfigError, RdisError
from .experiment import (
    SWEEP_AXES,
    LEARNED,
    load_config,
    load_dataset,
    make_eval_sets,
    report,
    sweep,
)
from .losses import eval_mse
from .selftrain import dump_pseudo, train_rdis

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p):
    p.add_argument("--config", help="key = value experiment config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--desk-scale", action="store_true",
                   help="small preset: 2 models, 200 epochs, 200 windows")


def build_parser():
    ap = _Parser(prog="rdis", description="Random drop imputation with self-training for time series.")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one ensemble and save a checkpoint directory")
    _common(p)
    p.add_argument("--method", default="rdis", choices=LEARNED)
    p.add_argument("--missing-rate", type=float, default=None,
                   help="hold out this %% of observed cells and report test MSE")
    p.add_argument("--seed", type=int, default=None, help="default: first configured seed")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--pseudo-dump", help="write the last pseudo-value set to this CSV")

    p = sub.add_parser("impute", help="fill missing cells of a CSV with a trained ensemble")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("sweep", help="run the experiment over values of one axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--output", help="result CSV (default: config `output`)")

    p = sub.add_parser("report", help="aggregate a result CSV into summary and plot files")
    p.add_argument("results")
    p.add_argument("--prefix", help="output prefix (default: result path without extension)")
    return ap


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args):
    cfg = load_config(args.config, args.set, args.desk_scale)
    if args.method == "rdis" and cfg.n_models < 2:
        raise ConfigError("n_models: method rdis needs at least 2 models")
    seed = cfg.seeds[0] if args.seed is None else args.seed
    ds = load_dataset(cfg)
    splits = split(ds)
    if args.missing_rate is not None:
        tr, _, te = make_eval_sets(splits, args.missing_rate, seed)
        data = TrainData.from_eval(tr)
    else:
        data, te = TrainData(splits.train.values, splits.train.mask), None
    if args.method == "none":
        state, _ = train_rdi(data, cfg.train_config(seed, n_models=1, objective="reconstruction"))
    elif args.method == "rdi_no_ensemble":
        state, _ = train_rdi(data, cfg.train_config(seed, n_models=1))
    else:
        state, _ = train_rdi(data, cfg.train_config(seed))
        if args.method == "rdis":
            last = {}
            state, _ = train_rdis(data, state.config, cfg.self_config(), state=state,
                                  on_pseudo=lambda ps: last.update(ps=ps))
            if args.pseudo_dump and "ps" in last:
                dump_pseudo(args.pseudo_dump, last["ps"], data.mask)
    extra = {"method": args.method, "columns": ds.columns, "experiment_hash": cfg.hash()}
    if te is not None:
        est, _ = ensemble_predict(state, te.values, te.train_mask)
        extra["test_mse"] = eval_mse(te.truth, est, te.holdout)
        extra["missing_rate"] = args.missing_rate
    manifest = save_ensemble(args.out, state, splits.normalizer, extra=extra)
    print(json.dumps({k: manifest[k] for k in ("n_models", "config_hash", "method") if k in manifest}
                     | ({"test_mse": extra["test_mse"]} if "test_mse" in extra else {})))
    return EXIT_OK


def cmd_impute(args):
    state, manifest = load_ensemble(args.checkpoint)
    columns = manifest.get("columns")
    table = load_csv(args.input, columns=columns)
    norm = Normalizer.from_dict(manifest["normalizer"]) if manifest.get("normalizer") else None
    x = norm.transform(table.values, table.mask) if norm else table.values
    # the whole table is treated as one sequence
    est, _ = ensemble_predict(state, x[None], table.mask[None])
    est = est[0]
    if norm:
        est = norm.inverse(est)
    out = np.where(table.mask > 0, table.values, est)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table.columns)
        for row in out:
            w.writerow([repr(float(v)) for v in row])
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config, args.set, args.desk_scale)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    _, summary = sweep(cfg, args.axis, values, output=args.output, log=_log)
    w = csv.writer(sys.stdout)
    w.writerow([args.axis, "method", "mse_mean"])
    for (v, m), mse in summary.items():
        w.writerow([v, m, repr(mse)])
    return EXIT_OK


def cmd_report(args):
    summary = report(args.results, args.prefix)
    w = csv.writer(sys.stdout)
    keys = ("method", "model", "missing_rate", "drop_rate", "threshold", "update_epoch", "n")
    w.writerow(keys + ("mse_mean", "mse_std"))
    for s in summary:
        w.writerow([s[k] for k in keys] + [f"{s['mse_mean']:.6f}", f"{s['mse_std']:.6f}"])
    return EXIT_OK


COMMANDS = {"train": cmd_train, "impute": cmd_impute, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"rdis: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RdisError, OSError) as exc:
        print(f"rdis: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
