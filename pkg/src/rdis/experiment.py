"""Config-driven experiments: train, score, sweep and aggregate.

An :class:`ExperimentConfig` is read from a ``key = value`` text file and
overridden by ``--set key=value`` pairs.  Every run appends one row to a
result CSV as soon as it finishes, and a rerun skips rows it already has, so
interrupted sweeps resume where they stopped.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import baselines
from .data import inject_missing, load_cache, load_csv, make_windows, split, synthetic_sinusoids
from .ensemble import TrainConfig, TrainData, config_hash, ensemble_predict, train_rdi
from .errors import ConfigError, RdisError, ReportError, TrainingError
from .losses import eval_mse
from .selftrain import SelfTrainConfig, train_rdis

RESULT_HEADER = (
    "config_hash",
    "dataset",
    "method",
    "model",
    "missing_rate",
    "drop_rate",
    "threshold",
    "update_epoch",
    "seed",
    "mse",
    "n_holdout",
    "wall_clock",
    "status",
)
SUMMARY_HEADER = (
    "dataset",
    "method",
    "model",
    "missing_rate",
    "drop_rate",
    "threshold",
    "update_epoch",
    "n",
    "mse_mean",
    "mse_std",
)
PLOT_HEADER = ("series", "x", "y", "yerr")

LEARNED = ("none", "rdi_no_ensemble", "rdi", "rdis")
BASELINES = ("forward", "backward", "mean", "knn")
METHODS = LEARNED + BASELINES
MODELS = ("gru", "bigru", "linear")
SWEEP_AXES = ("missing_rate", "drop_rate", "threshold", "update_epoch")

# fields that never change what a single run computes
_HASH_IGNORE = ("seeds", "missing_rates", "methods", "output", "workers", "cache")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"  # CSV path, .npz cache, or "synthetic"
    columns: list = field(default_factory=list)  # empty = all but `exclude`
    exclude: list = field(default_factory=list)
    T: int = 48
    n_windows: int = 0  # 0 = every start offset
    stride: int = 1
    window_seed: int = 0
    synthetic_windows: int = 2000
    synthetic_features: int = 4
    synthetic_noise: float = 0.1
    model: str = "bigru"
    methods: list = field(default_factory=lambda: ["none", "rdi_no_ensemble", "rdi", "rdis"])
    n_models: int = 8
    drop_rate: float = 0.3
    threshold: float = 0.03
    update_epoch: int = 400
    epochs: int = 2000
    self_epochs: int = -1  # -1 = same as epochs
    batch: int = 128
    lr: float = 0.0005
    hidden: int = 100
    fill: bool = True
    resample_drop: bool = False
    reinit: bool = False
    knn_k: int = 5
    knn_epsilon: float = 1e-6
    missing_rates: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output: str = "results.csv"
    cache: str = ""  # optional dataset cache path to write
    workers: int = 1

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.model not in MODELS:
            bad("model", f"must be one of {MODELS}, got {self.model!r}")
        if not self.methods:
            bad("methods", "at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                bad("methods", f"unknown method {m!r}; choose from {METHODS}")
        for name in ("T", "stride", "n_models", "update_epoch", "batch", "hidden", "knn_k", "workers", "synthetic_windows", "synthetic_features"):
            if getattr(self, name) < 1:
                bad(name, f"must be at least 1, got {getattr(self, name)}")
        if self.n_windows < 0:
            bad("n_windows", f"must be nonnegative, got {self.n_windows}")
        if self.epochs < 1:
            bad("epochs", f"must be at least 1, got {self.epochs}")
        if self.self_epochs < -1:
            bad("self_epochs", f"must be -1 or nonnegative, got {self.self_epochs}")
        if not 0.0 < self.drop_rate < 1.0:
            bad("drop_rate", f"must lie in (0, 1), got {self.drop_rate}")
        if not self.threshold >= 0:
            bad("threshold", f"must be nonnegative, got {self.threshold}")
        if not self.lr > 0:
            bad("lr", f"must be positive, got {self.lr}")
        if not self.knn_epsilon > 0:
            bad("knn_epsilon", f"must be positive, got {self.knn_epsilon}")
        if self.synthetic_noise < 0:
            bad("synthetic_noise", f"must be nonnegative, got {self.synthetic_noise}")
        if not self.missing_rates:
            bad("missing_rates", "at least one rate is required")
        for p in self.missing_rates:
            if not 0.0 < p < 100.0:
                bad("missing_rates", f"rates are percentages in (0, 100), got {p}")
        if not self.seeds:
            bad("seeds", "at least one seed is required")
        if "rdis" in self.methods and self.n_models < 2:
            bad("n_models", "method rdis needs at least 2 models")
        return self

    @property
    def effective_self_epochs(self):
        return self.epochs if self.self_epochs < 0 else self.self_epochs

    def hash(self):
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in _HASH_IGNORE}
        return config_hash(d, ignore=())

    def train_config(self, seed, n_models=None, objective="rdi"):
        return TrainConfig(
            model=self.model,
            hidden=self.hidden,
            epochs=self.epochs,
            batch_size=self.batch,
            lr=self.lr,
            n_models=self.n_models if n_models is None else n_models,
            drop_rate=self.drop_rate,
            seed=seed,
            objective=objective,
            resample_drop=self.resample_drop,
            fill=self.fill,
            workers=self.workers,
        )

    def self_config(self):
        return SelfTrainConfig(
            threshold=self.threshold,
            update_epoch=self.update_epoch,
            self_epochs=self.effective_self_epochs,
            reinit=self.reinit,
        )


DESK_SCALE = {"n_models": 2, "epochs": 200, "n_windows": 200, "synthetic_windows": 200}


def _field_types():
    return {f.name: f for f in fields(ExperimentConfig)}


def _parse_bool(name, s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {s!r}")


def _coerce(name, raw):
    f = _field_types().get(name)
    if f is None:
        raise ConfigError(f"{name}: unknown config field")
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(name, raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if name == "seeds":
                return [int(s) for s in items]
            if name == "missing_rates":
                return [float(s) for s in items]
            return items
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return raw


def parse_pairs(pairs):
    """``["key=value", ...]`` -> typed dict; raises :class:`ConfigError`."""
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"{item!r}: expected key=value")
        k, v = item.split("=", 1)
        k = k.strip()
        out[k] = _coerce(k, v)
    return out


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"config file {path}: {exc.strerror}") from None
    pairs = {}
    for lineno, line in enumerate(lines, start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = s.split("=", 1)
        k = k.strip()
        try:
            pairs[k] = _coerce(k, v)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return pairs


def load_config(path=None, overrides=(), desk_scale=False):
    """Defaults, then the desk-scale preset, then the file, then ``overrides``."""
    values = dict(DESK_SCALE) if desk_scale else {}
    if path:
        values.update(read_config_file(path))
    values.update(parse_pairs(overrides))
    return ExperimentConfig(**values).validate()


def load_dataset(cfg):
    if cfg.dataset == "synthetic":
        ds = synthetic_sinusoids(
            n_windows=cfg.synthetic_windows,
            T=cfg.T,
            D=cfg.synthetic_features,
            noise=cfg.synthetic_noise,
            seed=cfg.window_seed,
        )
    elif cfg.dataset.endswith(".npz"):
        ds = load_cache(cfg.dataset)
    else:
        table = load_csv(cfg.dataset, columns=cfg.columns or None, exclude=cfg.exclude)
        ds = make_windows(
            table,
            T=cfg.T,
            n_windows=cfg.n_windows or None,
            stride=cfg.stride,
            seed=cfg.window_seed,
            name=os.path.splitext(os.path.basename(cfg.dataset))[0],
        )
    if cfg.cache:
        from .data import save_cache

        save_cache(cfg.cache, ds)
    return ds


def _rate_key(p):
    return int(round(p * 1000))


def make_eval_sets(splits, p, seed):
    """Independent holdouts at rate ``p`` for train, val and test."""
    return tuple(
        inject_missing(d.values, d.mask, p, [seed, _rate_key(p), i])
        for i, d in enumerate((splits.train, splits.val, splits.test))
    )


def read_results(path):
    """Parsed rows of a result file (``[]`` if it does not exist)."""
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _done_keys(path):
    return {
        (r["config_hash"], r["method"], _rate_key(float(r["missing_rate"])), int(r["seed"]))
        for r in read_results(path)
    }


class ResultWriter:
    """Append-only CSV writer that flushes every row to disk."""

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        if not new:
            with open(path, newline="") as fh:
                header = next(csv.reader(fh), None)
            if tuple(header or ()) != RESULT_HEADER:
                raise ConfigError(f"output: {path} exists with a different header")
        self.fh = open(path, "a", newline="")
        self.w = csv.writer(self.fh)
        if new:
            self.w.writerow(RESULT_HEADER)
            self._flush()

    def _flush(self):
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def write(self, row):
        self.w.writerow([row[k] for k in RESULT_HEADER])
        self._flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _score_model(state, ev):
    est, _ = ensemble_predict(state, ev.values, ev.train_mask)
    return eval_mse(ev.truth, est, ev.holdout)


def _baseline(method, cfg, tr, te):
    if method == "forward":
        est = baselines.forward_fill(te.values, te.train_mask)
    elif method == "backward":
        est = baselines.backward_fill(te.values, te.train_mask)
    elif method == "mean":
        est = baselines.mean_fill(te.values, te.train_mask)
    else:
        kc = baselines.KnnConfig(k=min(cfg.knn_k, tr.values.shape[0]), epsilon=cfg.knn_epsilon)
        est = baselines.knn_impute_all(te.values, te.train_mask, tr.values, tr.train_mask, kc)
    return eval_mse(te.truth, est, te.holdout)


def _ordered(methods):
    # rdis continues the rdi ensemble in place, so it must run last
    return sorted(dict.fromkeys(methods), key=METHODS.index)


def run_cell(cfg, splits, p, seed, methods, emit, log=None):
    """All requested methods for one (missing rate, seed) pair."""
    tr, va, te = make_eval_sets(splits, p, seed)
    data = TrainData.from_eval(tr)
    base = {
        "config_hash": cfg.hash(),
        "dataset": getattr(splits.train, "name", "dataset"),
        "model": cfg.model,
        "missing_rate": _fmt(float(p)),
        "drop_rate": _fmt(cfg.drop_rate),
        "threshold": _fmt(cfg.threshold),
        "update_epoch": str(cfg.update_epoch),
        "seed": str(seed),
        "n_holdout": str(te.n_holdout),
    }
    state, state_time, state_err = None, 0.0, None

    def rdi_state(full):
        nonlocal state, state_time, state_err
        if state is None and state_err is None:
            t0 = time.perf_counter()
            try:
                n = cfg.n_models if full else 1
                state, _ = train_rdi(data, cfg.train_config(seed, n_models=n))
            except TrainingError as exc:
                state_err = str(exc)
            state_time = time.perf_counter() - t0
        return state

    need_full = any(m in ("rdi", "rdis") for m in methods)
    for method in _ordered(methods):
        t0 = time.perf_counter()
        row = dict(base, method=method)
        try:
            if method in BASELINES:
                mse = _baseline(method, cfg, tr, te)
                elapsed = time.perf_counter() - t0
            elif method == "none":
                st, _ = train_rdi(data, cfg.train_config(seed, n_models=1, objective="reconstruction"))
                mse = _score_model(st, te)
                elapsed = time.perf_counter() - t0
            else:
                st = rdi_state(need_full)
                if st is None:
                    raise TrainingError(state_err)
                if method == "rdi_no_ensemble":
                    mse = _score_model(st.subset([0]), te)
                    elapsed = state_time / st.n
                elif method == "rdi":
                    mse = _score_model(st, te)
                    elapsed = state_time
                else:
                    st, _ = train_rdis(data, st.config, cfg.self_config(), state=st)
                    mse = _score_model(st, te)
                    elapsed = state_time + time.perf_counter() - t0
            row.update(mse=_fmt(mse), wall_clock=_fmt(round(elapsed, 3)), status="ok")
        except TrainingError as exc:
            row.update(mse="nan", wall_clock=_fmt(round(time.perf_counter() - t0, 3)), status=f"diverged: {exc}")
        emit(row)
        if log:
            log(f"{method:16s} p={p:g} seed={seed} mse={row['mse']} ({row['status']})")


def run_experiment(cfg, output=None, log=None):
    """Run every (missing rate, seed, method) not already in the result file."""
    cfg.validate()
    output = output or cfg.output
    done = _done_keys(output)
    h = cfg.hash()
    ds = load_dataset(cfg)
    splits = split(ds)
    for d in (splits.train, splits.val, splits.test):
        d.name = ds.name
    rows = []
    with ResultWriter(output) as w:

        def emit(row):
            w.write(row)
            rows.append(row)

        for p in cfg.missing_rates:
            for seed in cfg.seeds:
                todo = [m for m in cfg.methods if (h, m, _rate_key(p), seed) not in done]
                if todo:
                    run_cell(cfg, splits, p, seed, todo, emit, log)
    return rows


def sweep(cfg, axis, values, output=None, log=None):
    """Run the experiment once per axis value; returns ``(rows, summary)``.

    ``summary`` maps ``(value, method)`` to the mean MSE over seeds.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigError("values: at least one value is required")
    output = output or cfg.output
    rows = []
    summary = {}
    for v in values:
        if axis == "missing_rate":
            c = replace(cfg, missing_rates=[float(v)])
        else:
            c = replace(cfg, **{axis: _coerce(axis, str(v))})
        c.validate()
        run_experiment(c, output, log)
        h = c.hash()
        mine = [
            r for r in read_results(output)
            if r["config_hash"] == h and _rate_key(float(r["missing_rate"])) in {_rate_key(p) for p in c.missing_rates}
        ]
        rows.extend(mine)
        for m in c.methods:
            vals = [float(r["mse"]) for r in mine if r["method"] == m and r["status"] == "ok"]
            summary[(v, m)] = float(np.mean(vals)) if vals else math.nan
    return rows, summary


def aggregate(path):
    """Mean and population std of MSE per run group of a result file."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ReportError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ReportError(f"{path}: empty result file")
        if tuple(header) != RESULT_HEADER:
            raise ReportError(f"{path}: line 1: unexpected header {header}")
        groups = {}
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RESULT_HEADER):
                raise ReportError(f"{path}: line {lineno}: expected {len(RESULT_HEADER)} fields, got {len(row)}")
            r = dict(zip(RESULT_HEADER, row))
            try:
                mse = float(r["mse"])
                p = float(r["missing_rate"])
                int(r["seed"])
            except ValueError:
                raise ReportError(f"{path}: line {lineno}: malformed numeric field") from None
            n_rows += 1
            if r["status"] != "ok":
                continue
            if not mse >= 0:
                raise ReportError(f"{path}: line {lineno}: mse must be nonnegative, got {r['mse']}")
            key = (r["dataset"], r["method"], r["model"], p, r["drop_rate"], r["threshold"], r["update_epoch"])
            groups.setdefault(key, []).append(mse)
    if n_rows == 0:
        raise ReportError(f"{path}: no result rows")
    out = []
    for key in sorted(groups, key=lambda k: (k[0], METHODS.index(k[1]) if k[1] in METHODS else 99, k[2:])):
        vals = np.asarray(groups[key])
        out.append({
            "dataset": key[0],
            "method": key[1],
            "model": key[2],
            "missing_rate": key[3],
            "drop_rate": key[4],
            "threshold": key[5],
            "update_epoch": key[6],
            "n": int(vals.size),
            "mse_mean": float(vals.mean()),
            "mse_std": float(vals.std()),
        })
    return out


def report(path, prefix=None):
    """Write ``<prefix>.summary.csv`` and ``<prefix>.plot.csv``; returns the summary rows."""
    summary = aggregate(path)
    prefix = prefix or os.path.splitext(path)[0]
    with open(prefix + ".summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([_fmt(s[k]) if k in ("missing_rate", "mse_mean", "mse_std") else s[k] for k in SUMMARY_HEADER])
    with open(prefix + ".plot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_HEADER)
        # name each series by the group fields that actually vary
        varying = [k for k in ("dataset", "model", "drop_rate", "threshold", "update_epoch")
                   if len({s[k] for s in summary}) > 1]
        for s in summary:
            name = "/".join([s["method"]] + [f"{k}={s[k]}" for k in varying])
            w.writerow([name, _fmt(s["missing_rate"]), _fmt(s["mse_mean"]), _fmt(s["mse_std"])])
    return summary


__all__ = [
    "ExperimentConfig",
    "RESULT_HEADER",
    "RdisError",
    "aggregate",
    "load_config",
    "report",
    "run_experiment",
    "sweep",
]
