import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdis.baselines import (
    KnnConfig,
    backward_fill,
    forward_fill,
    knn_distances,
    knn_impute,
    knn_impute_all,
    mean_fill,
)
from rdis.errors import ContractError, DimensionError


def col(vals):
    """Column fixture from a list with ``None`` for missing."""
    v = np.array([0.0 if a is None else a for a in vals])[:, None]
    m = np.array([0.0 if a is None else 1.0 for a in vals])[:, None]
    return v, m


def ffill_oracle(values, mask):
    out = values.copy()
    T, D = values.shape
    for d in range(D):
        obs = [t for t in range(T) if mask[t, d]]
        for t in range(T):
            if mask[t, d]:
                continue
            prev = [s for s in obs if s < t]
            out[t, d] = values[prev[-1], d] if prev else (values[obs[0], d] if obs else 0.0)
    return out


def test_forward_fill_fixture():
    v, m = col([None, 5, None, None, 7])
    assert np.array_equal(forward_fill(v, m)[:, 0], [5, 5, 5, 5, 7])


def test_backward_fill_fixture():
    v, m = col([None, 5, None, None, 7])
    assert np.array_equal(backward_fill(v, m)[:, 0], [5, 5, 7, 7, 7])


def test_fills_degenerate_cases():
    v = np.random.default_rng(0).normal(size=(6, 3))
    for fill in (forward_fill, backward_fill, mean_fill):
        assert np.array_equal(fill(v, np.ones_like(v)), v)
        assert np.array_equal(fill(v * 0, np.zeros_like(v)), np.zeros_like(v))


def test_fill_shape_errors():
    with pytest.raises(DimensionError):
        forward_fill(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        forward_fill(np.zeros(3), np.zeros(3))


def _random_series(rng):
    T, D = int(rng.integers(1, 15)), int(rng.integers(1, 5))
    m = (rng.random((T, D)) > rng.random()).astype(float)
    return rng.normal(size=(T, D)) * m, m


def test_duality_on_random_series():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v, m = _random_series(rng)
        assert np.array_equal(backward_fill(v, m), forward_fill(v[::-1], m[::-1])[::-1])
        assert np.array_equal(forward_fill(v, m), ffill_oracle(v, m))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_fill_invariants(seed):
    rng = np.random.default_rng(seed)
    v, m = _random_series(rng)
    for fill in (forward_fill, backward_fill, mean_fill):
        out = fill(v, m)
        assert np.all(np.isfinite(out))
        assert np.array_equal(out[m > 0], v[m > 0])


def test_stacked_fill_matches_per_series():
    rng = np.random.default_rng(4)
    m = (rng.random((5, 7, 3)) > 0.5).astype(float)
    v = rng.normal(size=m.shape) * m
    for fill in (forward_fill, backward_fill, mean_fill):
        assert np.array_equal(fill(v, m), np.stack([fill(a, b) for a, b in zip(v, m)]))


def test_mean_fill_uses_feature_mean():
    v, m = col([1.0, None, 3.0, None])
    assert np.array_equal(mean_fill(v, m)[:, 0], [1, 2, 3, 2])


def test_knn_identical_copy_k1():
    rng = np.random.default_rng(0)
    full = rng.normal(size=(6, 3))
    m = np.ones_like(full)
    m[2, 1] = m[4, 0] = 0
    corpus = np.stack([full, rng.normal(size=(6, 3)), rng.normal(size=(6, 3))])
    out = knn_impute(full * m, m, corpus, np.ones_like(corpus), KnnConfig(k=1))
    assert np.array_equal(out, full)


def test_knn_two_equidistant_neighbors():
    v = np.array([[1.0, 0.0]])
    m = np.array([[1.0, 0.0]])
    corpus = np.array([[[2.0, 2.0]], [[0.0, 4.0]]])  # both at distance 1
    out = knn_impute(v, m, corpus, np.ones_like(corpus), KnnConfig(k=2))
    assert out[0, 1] == 3.0 and out[0, 0] == 1.0


def test_knn_uniform_weights_give_plain_mean():
    rng = np.random.default_rng(2)
    v = np.array([[0.0, 0.0, 0.0]])
    m = np.array([[1.0, 0.0, 0.0]])
    corpus = np.zeros((4, 1, 3))
    corpus[:, 0, 0] = [1.0, -1.0, 1.0, -1.0]
    corpus[:, 0, 1:] = rng.normal(size=(4, 2))
    out = knn_impute(v, m, corpus, np.ones_like(corpus), KnnConfig(k=4))
    assert np.allclose(out[0, 1:], corpus[:, 0, 1:].mean(axis=0), rtol=0, atol=1e-15)


def test_knn_falls_back_to_mean_fill():
    v, m = np.array([[1.0, 0.0], [3.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]])
    corpus = np.array([[[1.0, 9.0], [3.0, 9.0]]])
    cm = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    out = knn_impute(v, m, corpus, cm, KnnConfig(k=1))
    assert np.array_equal(out, mean_fill(v, m))


def test_knn_distances_disjoint_is_inf():
    d = knn_distances(np.zeros((2, 2)), np.array([[1.0, 0], [0, 0]]), np.zeros((1, 2, 2)), np.array([[[0, 1.0], [1, 1]]]))
    assert np.isinf(d[0])


def test_knn_errors():
    with pytest.raises(ContractError):
        knn_impute(np.zeros((2, 2)), np.ones((2, 2)), np.zeros((0, 2, 2)), np.zeros((0, 2, 2)))
    with pytest.raises(ContractError):
        knn_impute(np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2, 2)), np.ones((2, 2, 2)), KnnConfig(k=3))
    with pytest.raises(ContractError):
        KnnConfig(k=0)
    with pytest.raises(ContractError):
        KnnConfig(epsilon=0.0)


def test_knn_all_passes_observed_through():
    rng = np.random.default_rng(7)
    m = (rng.random((4, 6, 2)) > 0.4).astype(float)
    v = rng.normal(size=m.shape) * m
    corpus = rng.normal(size=(10, 6, 2))
    out = knn_impute_all(v, m, corpus, np.ones_like(corpus), KnnConfig(k=3))
    assert np.array_equal(out[m > 0], v[m > 0]) and np.all(np.isfinite(out))
