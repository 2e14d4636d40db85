"""Non-learned reference imputers.

Every function takes zero-filled ``values`` and a 0/1 ``mask`` of shape
``(T, D)`` (or a stack ``(n, T, D)`` for the fills) and returns a completed
copy in which observed cells are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError


def _pair(values, mask):
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.shape != mask.shape:
        raise DimensionError(f"values {values.shape} and mask {mask.shape} differ")
    if values.ndim not in (2, 3):
        raise DimensionError(f"expected (T, D) or (n, T, D), got {values.shape}")
    return values, mask


def _ffill_2d(values, mask):
    T, D = values.shape
    obs = mask > 0
    idx = np.where(obs, np.arange(T)[:, None], -1)
    np.maximum.accumulate(idx, axis=0, out=idx)
    # leading gaps take the first observed value of the feature
    first = np.argmax(obs, axis=0)
    idx = np.where(idx < 0, first[None, :], idx)
    out = values[idx, np.arange(D)[None, :]]
    out[:, ~obs.any(axis=0)] = 0.0
    return np.where(obs, values, out)


def forward_fill(values, mask):
    """Carry the last observed value forward within each feature.

    Leading missing cells take the first observed value; a feature with no
    observations becomes 0 (the normalized mean).
    """
    values, mask = _pair(values, mask)
    if values.ndim == 2:
        return _ffill_2d(values, mask)
    return np.stack([_ffill_2d(v, m) for v, m in zip(values, mask)])


def backward_fill(values, mask):
    values, mask = _pair(values, mask)
    axis = values.ndim - 2
    return np.flip(forward_fill(np.flip(values, axis), np.flip(mask, axis)), axis)


def mean_fill(values, mask):
    """Missing cells take their feature's observed mean within the series (0 if none)."""
    values, mask = _pair(values, mask)
    axis = values.ndim - 2
    n = mask.sum(axis=axis, keepdims=True)
    mean = (values * mask).sum(axis=axis, keepdims=True) / np.maximum(n, 1.0)
    return np.where(mask > 0, values, np.broadcast_to(mean, values.shape))


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"k must be at least 1, got {self.k}")
        if self.epsilon <= 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")


def knn_distances(values, mask, corpus_values, corpus_mask):
    """Mean squared difference over cells observed in both; ``inf`` if none are."""
    both = corpus_mask * mask[None]
    n = both.sum(axis=(1, 2))
    sq = (((corpus_values - values[None]) ** 2) * both).sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, sq / np.maximum(n, 1.0), np.inf)


def knn_impute(values, mask, corpus_values, corpus_mask, cfg=KnnConfig()):
    """Fill missing cells with a distance-weighted average over the k nearest series.

    A cell takes ``sum(w_i v_i) / sum(w_i)`` over the neighbors observing it,
    with ``w_i = 1 / (d_i + epsilon)``; cells no neighbor observes fall back
    to :func:`mean_fill`.
    """
    values, mask = _pair(values, mask)
    corpus_values = np.asarray(corpus_values, dtype=np.float64)
    corpus_mask = np.asarray(corpus_mask, dtype=np.float64)
    if corpus_values.ndim != 3 or corpus_values.shape[0] == 0:
        raise ContractError("KNN needs a nonempty (n, T, D) corpus")
    if corpus_values.shape[1:] != values.shape or corpus_mask.shape != corpus_values.shape:
        raise DimensionError(f"corpus {corpus_values.shape} does not match series {values.shape}")
    if cfg.k > corpus_values.shape[0]:
        raise ContractError(f"k={cfg.k} exceeds corpus size {corpus_values.shape[0]}")
    d = knn_distances(values, mask, corpus_values, corpus_mask)
    near = np.argsort(d, kind="stable")[: cfg.k]
    near = near[np.isfinite(d[near])]
    out = mean_fill(values, mask)
    if near.size:
        w = (1.0 / (d[near] + cfg.epsilon))[:, None, None]
        cm = corpus_mask[near]
        num = (w * corpus_values[near] * cm).sum(axis=0)
        den = (w * cm).sum(axis=0)
        fill = (mask == 0) & (den > 0)
        out[fill] = num[fill] / den[fill]
    return out


def knn_impute_all(values, mask, corpus_values, corpus_mask, cfg=KnnConfig()):
    """:func:`knn_impute` for every series of an ``(n, T, D)`` stack."""
    return np.stack(
        [knn_impute(v, m, corpus_values, corpus_mask, cfg) for v, m in zip(values, mask)]
    )
