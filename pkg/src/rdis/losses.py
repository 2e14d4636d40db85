"""Masked squared-error losses.

Each norm term is a mean over the cells its mask selects, so terms built on
masks of different sizes stay on the same scale.  An empty mask yields a
constant zero that contributes nothing to any gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, mul, sub, tensor_sum
from .errors import ContractError, DegenerateInputError, DimensionError


@dataclass
class MaskedLoss:
    value: Tensor
    active_count: int

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return MaskedLoss(self.value + other.value, self.active_count + other.active_count)


def _check(name, a, shape):
    if a.shape != shape:
        raise DimensionError(f"{name} has shape {a.shape}, expected {shape}")


def masked_mse(target, pred, mask):
    """Mean of ``(target - pred)**2`` over cells where ``mask`` is 1."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check("target", target, pred.shape)
    _check("mask", mask, pred.shape)
    count = int(mask.sum())
    if count == 0:
        return MaskedLoss(Tensor(0.0), 0)
    diff = mul(sub(pred, target), mask)
    return MaskedLoss(mul(tensor_sum(mul(diff, diff)), 1.0 / count), count)


def reconstruction_loss(x, mask, pred):
    return masked_mse(x, pred, mask)


def rdi_loss(x, plan, pred):
    """Imputation loss on a drop plan.

    The first term scores the cells the plan removed against their true
    values; the second reconstructs the cells the model could see.
    """
    x = np.asarray(x, dtype=np.float64)
    if plan.base.shape != x.shape or plan.dropped.shape != x.shape:
        raise DimensionError(f"plan shape {plan.base.shape} does not match series {x.shape}")
    removed = plan.base - plan.dropped
    return masked_mse(x, pred, removed) + masked_mse(x * plan.dropped, pred, plan.dropped)


def self_loss(x, mask, pseudo, reliable, plan, pred):
    """Self-training loss: reliable pseudo values on missing cells plus observed cells.

    ``pred`` is the member's output on its own drop-plan input; ``plan`` may
    be ``None`` and is only used to check shapes.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    reliable = np.asarray(reliable, dtype=np.float64)
    if plan is not None and plan.base.shape != x.shape:
        raise DimensionError(f"plan shape {plan.base.shape} does not match series {x.shape}")
    if np.any(reliable * mask):
        raise ContractError("reliable pseudo cells overlap observed cells")
    return masked_mse(pseudo, pred, (1.0 - mask) * reliable) + masked_mse(x, pred, mask)


def eval_mse(truth, pred, holdout):
    """MSE over held-out cells; the headline evaluation metric."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    holdout = np.asarray(holdout, dtype=np.float64)
    if truth.shape != pred.shape or holdout.shape != pred.shape:
        raise DimensionError(f"shapes {truth.shape}, {pred.shape}, {holdout.shape} differ")
    n = holdout.sum()
    if n == 0:
        raise DegenerateInputError("no held-out cells to evaluate")
    return float((((truth - pred) * holdout) ** 2).sum() / n)
