import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdis.autodiff import Tensor, backward, zero_grad
from rdis.errors import ContractError, DimensionError
from rdis.models import (
    CHECKPOINT_MAGIC,
    BiGRUImputer,
    GruParams,
    GRUImputer,
    LinearImputer,
    build_imputer,
    gru_cell,
    gru_scan,
    gru_scan_reference,
    load_params,
    save_params,
)

from _fd import fd_grad, rel_err, sample_coords


def _series(B=2, T=8, D=3, p=0.3, seed=0):
    rng = np.random.default_rng(seed)
    m = (rng.random((B, T, D)) > p).astype(float)
    return rng.normal(size=(B, T, D)) * m, m


def test_gru_cell_zero_params():
    p = GruParams.zeros(3, 4)
    h = gru_cell(Tensor(np.array([1.0, -2.0, 0.5])), Tensor(np.zeros(4)), p)
    assert h.shape == (4,)
    assert np.array_equal(h.data, np.zeros(4))


def test_gru_cell_gate_formulas():
    rng = np.random.default_rng(0)
    p = GruParams.init(3, 4, rng)
    p.b.data[:] = rng.normal(size=12)
    x, h0 = rng.normal(size=3), rng.normal(size=4)
    sig = lambda a: 1 / (1 + np.exp(-a))
    Wz, Uz, bz = p.gate("z")
    Wr, Ur, br = p.gate("r")
    Wh, Uh, bh = p.gate("h")
    z = sig(x @ Wz + h0 @ Uz + bz)
    r = sig(x @ Wr + h0 @ Ur + br)
    c = np.tanh(x @ Wh + (r * h0) @ Uh + bh)
    expect = (1 - z) * h0 + z * c
    got = gru_cell(Tensor(x), Tensor(h0), p).data
    assert np.allclose(got, expect, rtol=0, atol=1e-14)


def test_gru_cell_ignores_x_with_zero_input_weights():
    rng = np.random.default_rng(1)
    p = GruParams.init(3, 4, rng)
    p.W.data[:] = 0
    h0 = Tensor(rng.normal(size=4))
    a = gru_cell(Tensor(rng.normal(size=3)), h0, p).data
    b = gru_cell(Tensor(rng.normal(size=3)), h0, p).data
    assert np.array_equal(a, b)


def test_gru_cell_shape_error():
    p = GruParams.zeros(3, 4)
    with pytest.raises(DimensionError):
        gru_cell(Tensor(np.zeros(2)), Tensor(np.zeros(4)), p)
    with pytest.raises(DimensionError):
        gru_cell(Tensor(np.zeros(3)), Tensor(np.zeros(5)), p)


def test_gru_cell_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    p = GruParams.init(3, 5, rng)
    x, h0 = Tensor(rng.normal(size=(2, 3)), requires_grad=True), Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    w = rng.normal(size=(2, 5))
    params = {**p.named(), "x": x, "h": h0}
    params.pop("W_out"), params.pop("b_out")
    f = lambda: float((gru_cell(x, h0, p).data * w).sum())
    zero_grad(params.values())
    backward((gru_cell(x, h0, p) * Tensor(w)).sum())
    coords = sample_coords(params, 120, rng)
    for name, c in coords:
        num = fd_grad(f, params[name].data, [c])[0]
        assert rel_err(params[name].grad.reshape(-1)[c], num) < 1e-4, name


@pytest.mark.parametrize("fill", [True, False])
def test_fused_scan_matches_reference(fill):
    x, m = _series(3, 9, 2, seed=4)
    p = GruParams.init(2, 6, np.random.default_rng(5))
    w1, w2 = np.random.default_rng(6).normal(size=(3, 9, 6)), np.random.default_rng(7).normal(size=(3, 9, 2))
    grads = []
    for scan in (gru_scan, gru_scan_reference):
        zero_grad(p.named().values())
        hp, y = scan(x, m, p, fill)
        backward((hp * Tensor(w1)).sum() + (y * Tensor(w2)).sum())
        grads.append((hp.data, y.data, [t.grad.copy() for t in p.named().values()]))
    (h1, y1, g1), (h2, y2, g2) = grads
    assert np.allclose(h1, h2, rtol=0, atol=1e-13)
    assert np.allclose(y1, y2, rtol=0, atol=1e-13)
    for a, b in zip(g1, g2):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gru", "bigru", "linear"])
def test_model_gradient_matches_finite_differences(kind):
    x, m = _series(1, 8, 3, seed=8)
    model = build_imputer(kind, 3, hidden=5, rng=9)
    params = model.parameters()
    w = np.random.default_rng(10).normal(size=x.shape)
    f = lambda: float((model.forward(x, m).data * w).sum())
    zero_grad(params.values())
    backward((model.forward(x, m) * Tensor(w)).sum())
    for name, c in sample_coords(params, 100, np.random.default_rng(11)):
        num = fd_grad(f, params[name].data, [c])[0]
        assert rel_err(params[name].grad.reshape(-1)[c], num) < 1e-4, name


def test_forward_uni_zero_params_gives_bias():
    x, m = _series(2, 6, 3)
    model = GRUImputer(3, hidden=4, zero=True)
    assert np.array_equal(model.forward(x, m).data, np.zeros((2, 6, 3)))
    model.cell.b_out.data[:] = [1.0, 2.0, 3.0]
    assert np.array_equal(model.forward(x, m).data, np.broadcast_to([1.0, 2.0, 3.0], (2, 6, 3)))


def test_forward_bi_zero_params_gives_head_bias():
    x, m = _series(2, 6, 3)
    model = BiGRUImputer(3, hidden=4, zero=True)
    model.head.b.data[:] = [0.5, -1.0, 2.0]
    assert np.array_equal(model.forward(x, m).data, np.broadcast_to([0.5, -1.0, 2.0], (2, 6, 3)))


def test_forward_bi_length_one_is_head_bias():
    model = BiGRUImputer(3, hidden=4, rng=0)
    model.head.b.data[:] = [0.25, 0.5, 0.75]
    x = np.random.default_rng(0).normal(size=(1, 1, 3))
    assert np.array_equal(model.forward(x, np.ones_like(x)).data[0, 0], [0.25, 0.5, 0.75])


def test_empty_series_is_dimension_error():
    for model in (GRUImputer(3, hidden=4, rng=0), BiGRUImputer(3, hidden=4, rng=0)):
        with pytest.raises(DimensionError):
            model.forward(np.zeros((1, 0, 3)), np.zeros((1, 0, 3)))


def test_mask_shape_mismatch():
    with pytest.raises(DimensionError):
        GRUImputer(3, hidden=4, rng=0).forward(np.zeros((1, 5, 3)), np.zeros((1, 5, 2)))


def test_fully_observed_inputs_are_the_series():
    # with m = 1 the fill never applies, so the cell inputs equal x whatever the head says
    x, _ = _series(2, 6, 3, p=0.0)
    m = np.ones_like(x)
    model = GRUImputer(3, hidden=4, rng=0)
    base = model.forward(x, m).data
    model.cell.b_out.data[:] += 5.0
    shifted = model.forward(x, m).data
    assert np.allclose(shifted - base, 5.0, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["gru", "bigru"]), st.booleans())
def test_no_self_leakage(seed, kind, missing):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 10))
    x, m = _series(1, T, 3, seed=seed)
    t, d = int(rng.integers(T)), int(rng.integers(3))
    m[0, t, d] = 0.0 if missing else 1.0
    model = build_imputer(kind, 3, hidden=4, rng=seed)
    before = model.forward(x, m).data
    x2 = x.copy()
    x2[0, t, d] += 1.0
    after = model.forward(x2, m).data
    assert np.array_equal(before[0, t], after[0, t])


def test_forward_uni_is_causal():
    x, m = _series(1, 10, 2, p=0.0)
    model = GRUImputer(2, hidden=4, rng=3)
    before = model.forward(x, m).data
    x2 = x.copy()
    x2[0, 6] += 1.0
    after = model.forward(x2, m).data
    assert np.array_equal(before[0, :7], after[0, :7])
    assert not np.array_equal(before[0, 7:], after[0, 7:])


def test_bigru_with_zero_backward_is_unidirectional():
    # zero backward weights leave h^b = 0, so the estimate is a map of h^f_{t-1} only
    x, m = _series(2, 7, 3)
    bi = BiGRUImputer(3, hidden=4, rng=0)
    for t in bi.bwd.named().values():
        t.data[:] = 0
    hf, _ = gru_scan(x, m, bi.fwd)
    expect = hf.data @ bi.head.W.data[:4] + bi.head.b.data
    assert np.allclose(bi.forward(x, m).data, expect, rtol=0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["gru", "bigru", "linear"]))
def test_output_shape_any_missingness(seed, kind):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 12))
    m = (rng.random((2, T, 3)) > rng.random()).astype(float)
    out = build_imputer(kind, 3, hidden=3, rng=seed).forward(rng.normal(size=(2, T, 3)) * m, m)
    assert out.shape == (2, T, 3) and np.all(np.isfinite(out.data))


def test_linear_identity_and_zero():
    x, _ = _series(2, 5, 3, p=0.0)
    m = np.ones_like(x)
    lin = LinearImputer(3, zero=True)
    lin.lin.W.data[:] = np.eye(3)
    assert np.array_equal(lin.forward(x, m).data, x)
    lin.lin.W.data[:] = 0
    lin.lin.b.data[:] = [1.0, 2.0, 3.0]
    assert np.array_equal(lin.forward(x, m).data, np.broadcast_to([1.0, 2.0, 3.0], x.shape))


def test_init_bounds():
    model = BiGRUImputer(3, hidden=16, rng=0)
    for name, p in model.parameters().items():
        if name.endswith("b") or name.endswith("b_out"):
            assert np.array_equal(p.data, np.zeros_like(p.data))
        elif name.startswith("head."):
            assert np.abs(p.data).max() <= 1 / np.sqrt(32)
        else:
            assert np.abs(p.data).max() <= 1 / np.sqrt(16)


def test_predict_accepts_single_series():
    x, m = _series(1, 5, 3)
    model = GRUImputer(3, hidden=4, rng=0)
    assert np.array_equal(model.predict(x[0], m[0]), model.predict(x, m)[0])


@pytest.mark.parametrize("kind", ["gru", "bigru", "linear"])
def test_checkpoint_round_trip(tmp_path, kind):
    model = build_imputer(kind, 3, hidden=4, rng=1)
    path = tmp_path / "m.params"
    save_params(path, model)
    assert path.read_bytes().startswith(CHECKPOINT_MAGIC)
    back = load_params(path)
    assert back.config() == model.config()
    for k, v in model.state_dict().items():
        assert np.array_equal(back.state_dict()[k], v)
    x, m = _series(1, 6, 3)
    assert np.array_equal(back.predict(x, m), model.predict(x, m))


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    bad = tmp_path / "bad.params"
    bad.write_bytes(b"NOT-A-CHECKPOINT\n{}\n")
    with pytest.raises(ContractError, match="magic"):
        load_params(bad)
    good = tmp_path / "good.params"
    save_params(good, GRUImputer(3, hidden=4, rng=0))
    cut = tmp_path / "cut.params"
    cut.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(ContractError, match="truncated"):
        load_params(cut)


def test_build_imputer_unknown_kind():
    with pytest.raises(ContractError):
        build_imputer("lstm", 3)
