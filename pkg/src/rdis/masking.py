"""Observation masks and random-drop plans.

A mask is a float array of 0/1 with the shape of the data it describes:
1 marks an observed cell, 0 a missing one.  A :class:`DropPlan` pairs the
original mask with a sparser copy in which a fixed fraction of the observed
cells has been removed; training on the removed cells gives the imputer an
explicit target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError

DEFAULT_SENTINELS = ("", "NA", "NaN", "nan", "N/A", "null")


@dataclass(frozen=True)
class DropPlan:
    base: np.ndarray
    dropped: np.ndarray
    rate: float
    seed: object

    @property
    def removed(self):
        """Cells observed in ``base`` but removed in ``dropped``."""
        return self.base - self.dropped

    @property
    def n_removed(self):
        return int(self.removed.sum())


def drop_count(n_observed, rate):
    """Number of cells a drop at ``rate`` removes from ``n_observed``.

    The epsilon keeps products such as ``0.29 * 100`` from flooring to 28.
    """
    return int(math.floor(rate * n_observed + 1e-9))


def _check_rate(rate):
    if not 0.0 < rate < 1.0:
        raise ContractError(f"drop rate must lie in (0, 1), got {rate}")


def check_binary(mask, name="mask"):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.size and not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError(f"{name} must contain only 0 and 1")
    return mask


def mask_from_sentinel(raw, sentinels=DEFAULT_SENTINELS):
    """Split a raw ``T x D`` table into zero-filled values and a mask.

    ``raw`` may hold numbers (NaN marks missing) or strings, where any entry
    in ``sentinels`` or anything that does not parse as a float marks
    missing.
    """
    arr = np.asarray(raw, dtype=object if not _is_numeric(raw) else np.float64)
    if arr.size == 0:
        raise DimensionError("empty input")
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.dtype == object:
        values = np.zeros(arr.shape)
        mask = np.zeros(arr.shape)
        sentinel_set = set(sentinels)
        for idx, cell in np.ndenumerate(arr):
            v = _parse(cell, sentinel_set)
            if v is not None:
                values[idx] = v
                mask[idx] = 1.0
        return values, mask
    mask = np.isfinite(arr).astype(np.float64)
    values = np.where(mask == 1.0, arr, 0.0)
    return values, mask


def _is_numeric(raw):
    try:
        a = np.asarray(raw)
    except ValueError:
        return False
    return a.dtype.kind in "fiub"


def _parse(cell, sentinels):
    if cell is None:
        return None
    if isinstance(cell, str):
        s = cell.strip()
        if s in sentinels:
            return None
        try:
            v = float(s)
        except ValueError:
            return None
    else:
        v = float(cell)
    return v if math.isfinite(v) else None


def random_drop(mask, rate, seed):
    """Remove exactly ``floor(rate * count(mask))`` observed cells.

    Cells are chosen uniformly without replacement over the whole mask by a
    shuffle seeded with ``seed`` (an int or a sequence of ints).
    """
    _check_rate(rate)
    mask = check_binary(mask)
    observed = np.flatnonzero(mask)
    if observed.size == 0:
        raise DegenerateInputError("mask has no observed cells to drop")
    k = drop_count(observed.size, rate)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(observed)[:k]
    dropped = mask.copy()
    dropped.flat[chosen] = 0.0
    return DropPlan(base=mask, dropped=dropped, rate=rate, seed=seed)


def random_drop_windows(masks, rate, seed):
    """Independent :func:`random_drop` per window of a ``(n, T, D)`` stack.

    Window ``i`` uses the seed ``[*seed, i]`` (``seed`` an int or a sequence
    of ints); windows without observed cells are passed through untouched.
    """
    _check_rate(rate)
    masks = check_binary(masks)
    if masks.ndim != 3:
        raise DimensionError(f"expected (n, T, D) masks, got {masks.shape}")
    prefix = [int(s) for s in np.atleast_1d(seed)]
    dropped = masks.copy()
    for i in range(masks.shape[0]):
        if masks[i].any():
            dropped[i] = random_drop(masks[i], rate, prefix + [i]).dropped
    return DropPlan(base=masks, dropped=dropped, rate=rate, seed=seed)


def augment(mask, rate, n, base_seed):
    """``n`` drop plans of the same mask with seeds ``base_seed .. base_seed+n-1``."""
    if n < 1:
        raise ContractError(f"need at least one plan, got n={n}")
    return [random_drop(mask, rate, base_seed + k) for k in range(n)]
