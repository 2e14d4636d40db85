"""Self-training on entropy-gated pseudo values.

The ensemble mean at an originally missing cell is a pseudo value; the
spread of the member outputs there, read as a Gaussian, gives its entropy.
Cells whose spread is at most the threshold are treated as reliable and
join the training targets.  Gating is done on the standard deviation itself:
entropy is strictly increasing in it, so ``sigma <= tau`` selects exactly the
cells with ``entropy <= entropy_of(tau)``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ensemble import TrainData, TrainReport, ensemble_predict, train_rdi
from .errors import ContractError
from .losses import masked_mse, self_loss

_HALF_LOG_2PI_E = 0.5 * (1.0 + math.log(2.0 * math.pi))

PSEUDO_HEADER = ("window", "t", "d", "pseudo", "sigma", "entropy", "reliable")


def entropy_of(sigma):
    """Differential entropy of a Gaussian with standard deviation ``sigma``.

    ``sigma = 0`` maps to ``-inf``.  Works elementwise on arrays.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s < 0) or np.any(np.isnan(s)):
        raise ContractError("sigma must be nonnegative")
    with np.errstate(divide="ignore"):
        out = np.log(s) + _HALF_LOG_2PI_E
    return float(out) if out.ndim == 0 else out


def sigma_for_entropy(h):
    """Inverse of :func:`entropy_of`."""
    return np.exp(np.asarray(h, dtype=np.float64) - _HALF_LOG_2PI_E)


@dataclass
class PseudoSet:
    pseudo: np.ndarray  # ensemble mean, every cell
    sigma: np.ndarray  # population std across members
    entropy: np.ndarray
    reliable: np.ndarray  # 1 at missing cells with sigma <= threshold
    threshold: float
    epoch: int = 0

    @property
    def n_reliable(self):
        return int(self.reliable.sum())


def build_pseudo(state, values, mask, threshold, epoch=0):
    """Pseudo values and reliability from the current ensemble on ``(values, mask)``."""
    members = state.members if hasattr(state, "members") else list(state)
    if len(members) < 2:
        raise ContractError("pseudo values need at least 2 members for a dispersion estimate")
    if not threshold >= 0:
        raise ContractError(f"threshold must be nonnegative, got {threshold}")
    mask = np.asarray(mask, dtype=np.float64)
    mean, outs = ensemble_predict(members, values, mask)
    sigma = outs.std(axis=0)
    reliable = ((sigma <= threshold) & (mask == 0)).astype(np.float64)
    return PseudoSet(
        pseudo=mean,
        sigma=sigma,
        entropy=entropy_of(sigma),
        reliable=reliable,
        threshold=float(threshold),
        epoch=epoch,
    )


def dump_pseudo(path, ps, mask=None, only_missing=True):
    """Write per-cell rows ``window, t, d, pseudo, sigma, entropy, reliable``."""
    pseudo = ps.pseudo if ps.pseudo.ndim == 3 else ps.pseudo[None]
    sigma = ps.sigma.reshape(pseudo.shape)
    ent = np.asarray(ps.entropy).reshape(pseudo.shape)
    rel = ps.reliable.reshape(pseudo.shape)
    keep = np.ones(pseudo.shape, dtype=bool)
    if only_missing and mask is not None:
        keep = np.asarray(mask).reshape(pseudo.shape) == 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PSEUDO_HEADER)
        for i, t, d in zip(*np.nonzero(keep)):
            w.writerow(
                [i, t, d, repr(float(pseudo[i, t, d])), repr(float(sigma[i, t, d])),
                 repr(float(ent[i, t, d])), int(rel[i, t, d])]
            )


@dataclass
class SelfTrainConfig:
    threshold: float = 0.03
    update_epoch: int = 400
    self_epochs: int = 2000
    reinit: bool = False  # restart members from scratch instead of continuing

    def validate(self):
        if self.update_epoch < 1:
            raise ContractError(f"update_epoch must be at least 1, got {self.update_epoch}")
        if self.self_epochs < 0:
            raise ContractError(f"self_epochs must be nonnegative, got {self.self_epochs}")
        if not self.threshold >= 0:
            raise ContractError(f"threshold must be nonnegative, got {self.threshold}")
        return self


@dataclass
class SelfTrainReport(TrainReport):
    pseudo_epochs: list = field(default_factory=list)
    n_reliable: list = field(default_factory=list)


def _self_objective(trainer, ps):
    data = trainer.data

    def objective(idx, pred):
        return self_loss(data.values[idx], data.mask[idx], ps.pseudo[idx], ps.reliable[idx], None, pred)

    return objective


def _reinit(state, data):
    from .ensemble import MemberTrainer

    cfg = state.config
    trainers = [MemberTrainer(t.k, cfg, data) for t in state.trainers]
    state.trainers = trainers
    state.members = [t.model for t in trainers]
    state.plans = [t.plan for t in trainers]


def train_rdis(data, cfg, scfg, state=None, val=None, on_pseudo=None):
    """Self-train an RDI ensemble for ``scfg.self_epochs`` epochs.

    Without ``state``, the ensemble is first pretrained with :func:`train_rdi`.
    Pseudo values are rebuilt from the ensemble at the start of every
    ``update_epoch``-long period and shared by all members; each member keeps
    its own input drop plan, optimizer state and batch order.  A given
    ``state`` is trained in place.  ``on_pseudo(ps)`` is called after every
    rebuild.
    """
    scfg.validate()
    if not isinstance(data, TrainData):
        data = TrainData(*data)
    if state is None:
        state, pre = train_rdi(data, cfg, val=val)
    else:
        pre = None
    if state.n < 2:
        raise ContractError("self-training needs an ensemble of at least 2 members")
    if not state.trainers:
        raise ContractError("ensemble state has no trainers to continue (load a trained run)")
    if scfg.reinit:
        _reinit(state, data)
    t0 = time.perf_counter()
    report = SelfTrainReport(seed=state.config.seed)
    ps = None
    for e in range(scfg.self_epochs):
        if e % scfg.update_epoch == 0:
            ps = build_pseudo(state, data.values, data.mask, scfg.threshold, epoch=e)
            report.pseudo_epochs.append(e)
            report.n_reliable.append(ps.n_reliable)
            if on_pseudo is not None:
                on_pseudo(ps)
        for tr in state.trainers:
            tr.run_epoch(_self_objective(tr, ps))
            if val is not None and state.config.eval_every and tr.epoch % state.config.eval_every == 0:
                tr.validate(val)
    report.wall_clock = time.perf_counter() - t0 + (pre.wall_clock if pre else 0.0)
    report.epochs_done = scfg.self_epochs
    report.merge([t.report() for t in state.trainers])
    return state, report


def observed_objective(trainer):
    """Objective that scores observed cells only, on the member's drop-plan input."""
    data = trainer.data

    def objective(idx, pred):
        return masked_mse(data.values[idx], pred, data.mask[idx])

    return objective


def pseudo_accuracy_by_sigma(ps, truth, cells, n_buckets=10):
    """Mean absolute pseudo error per sigma quantile bucket over ``cells``.

    Returns ``(edges, mean_abs_error, counts)`` with buckets ordered by
    increasing sigma.
    """
    cells = np.asarray(cells) > 0
    s = ps.sigma[cells]
    err = np.abs(ps.pseudo[cells] - np.asarray(truth)[cells])
    if s.size < n_buckets:
        raise ContractError(f"need at least {n_buckets} cells, got {s.size}")
    order = np.argsort(s, kind="stable")
    groups = np.array_split(order, n_buckets)
    edges = np.array([s[g].max() for g in groups])
    mae = np.array([err[g].mean() for g in groups])
    counts = np.array([g.size for g in groups])
    return edges, mae, counts


def count_inversions(seq, tol=0.0):
    """Number of adjacent decreases in ``seq`` greater than ``tol``."""
    seq = np.asarray(seq, dtype=np.float64)
    return int((np.diff(seq) < -tol).sum())
