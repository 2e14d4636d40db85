"""Ensemble training with random-drop imputation, and ensemble inference.

Member ``k`` owns every random choice it makes: its seed is
``config.seed + k`` and it draws initialization, drop plan and batch order
from three separate streams of that seed.  A member therefore trains the same
way whether or not other members exist, and members can be trained in any
order or on separate threads.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Adam, backward
from .errors import ContractError, DimensionError, TrainingError
from .losses import eval_mse, masked_mse, rdi_loss
from .masking import DropPlan, check_binary, random_drop_windows
from .models import build_imputer, load_params, save_params

OBJECTIVES = ("rdi", "reconstruction")
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "rdis-ensemble-v1"


@dataclass
class TrainConfig:
    model: str = "bigru"
    hidden: int = 100
    epochs: int = 2000
    batch_size: int = 128
    lr: float = 0.0005
    n_models: int = 8
    drop_rate: float = 0.3
    seed: int = 0
    objective: str = "rdi"  # "reconstruction" trains on observed cells only
    resample_drop: bool = False  # draw a fresh plan every epoch
    fill: bool = True  # autoregressive fill of missing inputs (else zeros)
    eval_every: int = 0  # validation period in epochs, 0 = never
    select: str = "final"  # or "best" validation parameters
    workers: int = 1

    def validate(self):
        if self.n_models < 1:
            raise ContractError(f"n_models must be at least 1, got {self.n_models}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.objective not in OBJECTIVES:
            raise ContractError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective == "rdi" and not 0.0 < self.drop_rate < 1.0:
            raise ContractError(f"drop_rate must lie in (0, 1), got {self.drop_rate}")
        if self.select not in ("final", "best"):
            raise ContractError(f"select must be 'final' or 'best', got {self.select!r}")
        if self.select == "best" and self.eval_every < 1:
            raise ContractError("select='best' needs eval_every >= 1")
        return self

    def to_dict(self):
        return asdict(self)


def config_hash(d, ignore=("seed", "workers")):
    """Stable short hash of a config mapping, ignoring scheduling-only keys."""
    body = {k: v for k, v in sorted(d.items()) if k not in ignore}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class TrainData:
    """Training inputs: zero-filled values and the mask the models may see."""

    values: np.ndarray  # (n, T, D)
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = check_binary(self.mask)
        if self.values.shape != self.mask.shape or self.values.ndim != 3:
            raise DimensionError(f"expected matching (n, T, D) arrays, got {self.values.shape} / {self.mask.shape}")
        if self.values.shape[0] == 0:
            raise ContractError("training set is empty")
        self.values = self.values * self.mask

    @classmethod
    def from_eval(cls, ev):
        return cls(values=ev.values, mask=ev.train_mask)


@dataclass
class TrainReport:
    seed: int
    losses: list = field(default_factory=list)  # per member: per-epoch mean loss
    val_mse: list = field(default_factory=list)  # per member: [(epoch, mse)]
    wall_clock: float = 0.0
    epochs_done: int = 0

    def merge(self, member_reports):
        self.losses = [r["losses"] for r in member_reports]
        self.val_mse = [r["val"] for r in member_reports]


def _subset_plan(plan, idx):
    return DropPlan(base=plan.base[idx], dropped=plan.dropped[idx], rate=plan.rate, seed=plan.seed)


class MemberTrainer:
    """One ensemble member with its optimizer, random streams and drop plan."""

    def __init__(self, k, cfg, data):
        self.k = k
        self.cfg = cfg
        self.seed = cfg.seed + k
        self.d = data.values.shape[-1]
        init_rng = np.random.default_rng([self.seed, 0])
        self.shuffle_rng = np.random.default_rng([self.seed, 2])
        self.model = build_imputer(cfg.model, self.d, hidden=cfg.hidden, rng=init_rng, fill=cfg.fill)
        self.opt = Adam(self.model.parameters(), lr=cfg.lr)
        self.data = data
        self.plan = self._draw_plan(0)
        self.epoch = 0
        self.losses = []
        self.val = []
        self.best = None

    def _draw_plan(self, epoch):
        if self.cfg.objective == "reconstruction":
            m = self.data.mask
            return DropPlan(base=m, dropped=m, rate=0.0, seed=None)
        seed = [self.seed, 1, epoch] if self.cfg.resample_drop else [self.seed, 1]
        return random_drop_windows(self.data.mask, self.cfg.drop_rate, seed)

    def rdi_objective(self, idx, pred):
        x = self.data.values[idx]
        if self.cfg.objective == "reconstruction":
            return masked_mse(x, pred, self.data.mask[idx])
        return rdi_loss(x, _subset_plan(self.plan, idx), pred)

    def run_epoch(self, objective=None):
        """One pass over shuffled batches; returns the mean batch loss."""
        objective = objective or self.rdi_objective
        if self.cfg.resample_drop and self.epoch > 0:
            self.plan = self._draw_plan(self.epoch)
        n = self.data.values.shape[0]
        order = self.shuffle_rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, self.cfg.batch_size):
            idx = np.sort(order[lo : lo + self.cfg.batch_size])
            dropped = self.plan.dropped[idx]
            self.opt.zero_grad()
            try:
                pred = self.model.forward(self.data.values[idx] * dropped, dropped)
                loss = objective(idx, pred)
            except TrainingError as exc:
                raise TrainingError(f"member {self.k} diverged at epoch {self.epoch + 1}: {exc}") from None
            value = float(loss)
            if not np.isfinite(value):
                raise TrainingError(f"member {self.k} diverged at epoch {self.epoch + 1}: loss {value}")
            backward(loss.value)
            try:
                self.opt.step()
            except TrainingError as exc:
                raise TrainingError(f"member {self.k}, epoch {self.epoch + 1}: {exc}") from None
            total += value
            count += 1
        self.epoch += 1
        mean = total / max(count, 1)
        self.losses.append(mean)
        return mean

    def validate(self, val):
        pred = predict_batched(self.model, val.values, val.train_mask)
        mse = eval_mse(val.truth, pred, val.holdout)
        self.val.append((self.epoch, mse))
        if self.cfg.select == "best" and (self.best is None or mse < self.best[0]):
            self.best = (mse, self.model.state_dict())
        return mse

    def train(self, epochs, val=None, objective=None):
        for _ in range(epochs):
            self.run_epoch(objective)
            if val is not None and self.cfg.eval_every and self.epoch % self.cfg.eval_every == 0:
                self.validate(val)
        return self

    def finalize(self):
        if self.cfg.select == "best" and self.best is not None:
            self.model.load_state_dict(self.best[1])

    def report(self):
        return {"losses": list(self.losses), "val": list(self.val)}


@dataclass
class EnsembleState:
    members: list
    plans: list
    config: TrainConfig
    trainers: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return len(self.members)

    @property
    def seeds(self):
        return [self.config.seed + k for k in range(self.n)]

    def subset(self, ks):
        ks = list(ks)
        return EnsembleState(
            members=[self.members[k] for k in ks],
            plans=[self.plans[k] for k in ks],
            config=self.config,
            trainers=[self.trainers[k] for k in ks] if self.trainers else [],
        )


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def train_rdi(data, cfg, val=None, members=None):
    """Train ``cfg.n_models`` members, each on its own random-drop plan.

    ``members`` restricts training to the given member indices (seeds keep
    their ``cfg.seed + k`` meaning).  ``val`` is an optional
    :class:`rdis.data.EvalSet` scored every ``cfg.eval_every`` epochs.
    """
    cfg.validate()
    if not isinstance(data, TrainData):
        data = TrainData(*data)
    ks = list(range(cfg.n_models)) if members is None else list(members)
    if not ks:
        raise ContractError("no members to train")
    t0 = time.perf_counter()

    def run(k):
        tr = MemberTrainer(k, cfg, data).train(cfg.epochs, val)
        tr.finalize()
        return tr

    trainers = _map(run, ks, cfg.workers)
    report = TrainReport(seed=cfg.seed, wall_clock=time.perf_counter() - t0, epochs_done=cfg.epochs)
    report.merge([t.report() for t in trainers])
    state = EnsembleState(
        members=[t.model for t in trainers],
        plans=[t.plan for t in trainers],
        config=cfg,
        trainers=trainers,
    )
    return state, report


def predict_batched(model, values, mask, batch_size=256):
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.ndim == 2:
        return model.predict(values * mask, mask)
    out = np.empty_like(values)
    for lo in range(0, values.shape[0], batch_size):
        sl = slice(lo, lo + batch_size)
        out[sl] = model.predict(values[sl] * mask[sl], mask[sl])
    return out


def ensemble_predict(state, values, mask, batch_size=256):
    """Mean of the member estimates and the stacked member estimates."""
    members = state.members if isinstance(state, EnsembleState) else list(state)
    if not members:
        raise ContractError("ensemble has no members")
    values = np.asarray(values, dtype=np.float64)
    d = members[0].d
    if values.shape[-1] != d:
        raise DimensionError(f"series has {values.shape[-1]} features, ensemble expects {d}")
    outs = np.stack([predict_batched(m, values, mask, batch_size) for m in members])
    return outs.mean(axis=0), outs


def impute(state, values, mask):
    """Observed cells pass through; missing cells take the ensemble estimate."""
    mask = check_binary(mask)
    values = np.asarray(values, dtype=np.float64)
    est, _ = ensemble_predict(state, values, mask)
    return np.where(mask > 0, values, est)


def save_ensemble(path, state, normalizer=None, extra=None):
    """One parameter file per member plus ``manifest.json``."""
    os.makedirs(path, exist_ok=True)
    files = []
    for k, m in enumerate(state.members):
        name = f"member_{k:02d}.params"
        save_params(os.path.join(path, name), m)
        files.append(name)
    cfg = state.config.to_dict()
    manifest = {
        "format": MANIFEST_FORMAT,
        "n_models": state.n,
        "seeds": state.seeds,
        "files": files,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "normalizer": normalizer.to_dict() if normalizer is not None else None,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_ensemble(path):
    """Returns ``(EnsembleState, manifest)``; plans are not stored and come back empty."""
    try:
        with open(os.path.join(path, MANIFEST)) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ContractError(f"{path}: cannot read ensemble manifest ({exc})") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ContractError(f"{path}: unsupported manifest format {manifest.get('format')!r}")
    members = [load_params(os.path.join(path, f)) for f in manifest["files"]]
    cfg = TrainConfig(**manifest["config"])
    return EnsembleState(members=members, plans=[None] * len(members), config=cfg), manifest
