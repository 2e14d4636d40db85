"""Acceptance criteria, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary ends
with one PASS/FAIL line per criterion.
"""

import math
import time
from decimal import Decimal

import numpy as np
import pytest

from rdis.autodiff import Tensor, backward, zero_grad
from rdis.baselines import KnnConfig, backward_fill, forward_fill, knn_impute
from rdis.data import inject_missing, split, split_counts, synthetic_sinusoids
from rdis.ensemble import TrainConfig, TrainData, ensemble_predict, train_rdi
from rdis.experiment import ExperimentConfig, load_dataset, make_eval_sets
from rdis.losses import eval_mse, masked_mse, rdi_loss, self_loss
from rdis.masking import DropPlan, random_drop
from rdis.models import BiGRUImputer, GRUImputer
from rdis.selftrain import count_inversions, entropy_of, pseudo_accuracy_by_sigma, train_rdis

from _fd import fd_grad, rel_err, sample_coords

criterion = pytest.mark.criterion


@criterion(1, "entropy closed form")
def test_criterion_01_entropy(record_property):
    a = abs(entropy_of(1.0) - 0.5 * (1 + math.log(2 * math.pi)))
    b = abs(entropy_of(1 / math.sqrt(2 * math.pi * math.e)))
    record_property("measured", f"errors {a:.1e}, {b:.1e}")
    assert a < 1e-9 and b < 1e-9


@criterion(2, "Bi-GRU gradients vs central differences")
def test_criterion_02_gradients(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    m = (rng.random((1, 8, 3)) >= 0.3).astype(float)
    x = rng.normal(size=(1, 8, 3)) * m
    model = BiGRUImputer(3, hidden=8, rng=1)
    plan = random_drop(m[0], 0.3, 2)
    plan = DropPlan(plan.base[None], plan.dropped[None], plan.rate, plan.seed)
    params = model.parameters()

    def loss():
        return rdi_loss(x, plan, model.forward(x * plan.dropped, plan.dropped)).value

    zero_grad(params.values())
    backward(loss())
    worst = 0.0
    for name, c in sample_coords(params, 200, np.random.default_rng(3)):
        num = fd_grad(lambda: float(loss()), params[name].data, [c], h=1e-5)[0]
        worst = max(worst, float(rel_err(params[name].grad.reshape(-1)[c], num)))
    elapsed = time.perf_counter() - t0
    record_property("measured", f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert worst < 1e-4
    assert elapsed < 10


@criterion(3, "mask algebra on 1000 random triples")
def test_criterion_03_mask_algebra(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        T, D = int(rng.integers(1, 50)), int(rng.integers(1, 8))
        mask = (rng.random((T, D)) >= rng.random()).astype(float)
        if not mask.any():
            continue
        rate = round(float(rng.uniform(0.001, 0.999)), int(rng.integers(1, 4)))
        if not 0 < rate < 1:
            continue
        seed = int(rng.integers(2**32))
        plan = random_drop(mask, rate, seed)
        assert np.all(plan.dropped <= mask)
        assert plan.n_removed == math.floor(Decimal(repr(rate)) * int(mask.sum()))
        assert np.array_equal(random_drop(mask, rate, seed).dropped, plan.dropped)
        checked += 1
    elapsed = time.perf_counter() - t0
    record_property("measured", f"{checked} triples, {elapsed:.2f} s")
    assert elapsed < 5


@criterion(4, "loss oracles")
def test_criterion_04_loss_oracles(record_property):
    plan = DropPlan(np.ones((1, 2)), np.array([[0.0, 1.0]]), 0.5, None)
    rdi = float(rdi_loss(np.array([[4.0, 6.0]]), plan, Tensor(np.array([[5.0, 5.0]]))))
    slf = float(self_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 3.0]),
                          np.array([0.0, 1.0]), None, Tensor(np.array([1.0, 2.0]))))
    mse = float(masked_mse(np.array([1.0, 2.0, 3.0]), Tensor(np.zeros(3)), np.array([1.0, 0.0, 1.0])))
    record_property("measured", f"rdi {rdi!r}, self {slf!r}, masked {mse!r}")
    assert abs(rdi - 2.0) <= 1e-12
    assert abs(slf - 1.0) <= 1e-12
    assert abs(mse - 5.0) <= 1e-12


@criterion(5, "ensemble Jensen property")
def test_criterion_05_jensen(record_property):
    t0 = time.perf_counter()
    s = split(synthetic_sinusoids(n_windows=600, T=48, D=4, seed=11))
    tr = inject_missing(s.train.values, s.train.mask, 50, seed=1)
    te = inject_missing(s.test.values, s.test.mask, 50, seed=2)
    cfg = TrainConfig(model="gru", hidden=16, n_models=4, epochs=15, batch_size=128, seed=0)
    state, _ = train_rdi(TrainData.from_eval(tr), cfg)
    gaps = []
    for lo in range(0, len(s.test), 32):
        sl = slice(lo, lo + 32)
        mean, outs = ensemble_predict(state, te.values[sl], te.train_mask[sl])
        ens = eval_mse(te.truth[sl], mean, te.holdout[sl])
        members = np.mean([eval_mse(te.truth[sl], o, te.holdout[sl]) for o in outs])
        gaps.append(members - ens)
        assert ens <= members + 1e-12
    elapsed = time.perf_counter() - t0
    record_property("measured", f"{len(gaps)} batches, min gap {min(gaps):.2e}, {elapsed:.0f} s")
    assert elapsed < 120


@criterion(6, "no self-leakage")
def test_criterion_06_no_self_leakage(record_property):
    rng = np.random.default_rng(0)
    for kind in (GRUImputer, BiGRUImputer):
        model = kind(4, hidden=8, rng=1)
        for _ in range(50):
            T = int(rng.integers(1, 20))
            m = (rng.random((1, T, 4)) > 0.3).astype(float)
            x = rng.normal(size=(1, T, 4)) * m
            t = int(rng.integers(T))
            x2 = x.copy()
            x2[0, t] += 1.0
            assert np.array_equal(model.forward(x, m).data[0, t], model.forward(x2, m).data[0, t])
    record_property("measured", "50 pairs x 2 models, exact")


# -- criteria 7 and 8: desk-scale trend on synthetic sinusoids ---------------

C7 = dict(
    dataset="synthetic",
    synthetic_windows=2000,
    T=48,
    synthetic_features=4,
    model="gru",
    hidden=32,
    n_models=4,
    epochs=300,
    self_epochs=100,
    update_epoch=50,
    threshold=0.03,
    drop_rate=0.3,
    missing_rates=[50.0],
    seeds=[0, 1, 2, 3, 4],
)


@pytest.fixture(scope="module")
def trend_run():
    cfg = ExperimentConfig(**C7).validate()
    splits = split(load_dataset(cfg))
    t0 = time.perf_counter()
    runs = []
    for seed in cfg.seeds:
        tr, _, te = make_eval_sets(splits, 50.0, seed)
        data = TrainData.from_eval(tr)

        def score(state):
            est, _ = ensemble_predict(state, te.values, te.train_mask)
            return eval_mse(te.truth, est, te.holdout)

        none, _ = train_rdi(data, cfg.train_config(seed, n_models=1, objective="reconstruction"))
        rdi, _ = train_rdi(data, cfg.train_config(seed))
        run = {"seed": seed, "none": score(none), "rdi": score(rdi)}
        built = []
        rdis, _ = train_rdis(data, rdi.config, cfg.self_config(), state=rdi, on_pseudo=built.append)
        run["rdis"] = score(rdis)
        # pseudo values of the pretrained ensemble, scored on the train holdout
        run["pseudo"] = (built[0], tr.truth, tr.holdout)
        runs.append(run)
    return runs, time.perf_counter() - t0


@pytest.mark.slow
@criterion(7, "ablation trend: rdi < none by >= 5%, rdis <= rdi (median of 5 seeds)")
def test_criterion_07_ablation_trend(trend_run, record_property):
    runs, elapsed = trend_run
    med = {k: float(np.median([r[k] for r in runs])) for k in ("none", "rdi", "rdis")}
    gain = 1 - med["rdi"] / med["none"]
    per_seed = "; ".join(f"s{r['seed']} {r['none']:.4f}/{r['rdi']:.4f}/{r['rdis']:.4f}" for r in runs)
    record_property(
        "measured",
        f"median none {med['none']:.4f}, rdi {med['rdi']:.4f}, rdis {med['rdis']:.4f}, "
        f"rdi gain {100 * gain:.1f}%, {elapsed / 60:.1f} min; none/rdi/rdis {per_seed}",
    )
    print(f"criterion 7 per seed (none/rdi/rdis): {per_seed}")
    assert elapsed < 20 * 60
    assert med["rdis"] <= med["rdi"]
    assert med["rdi"] < med["none"]
    assert gain >= 0.05


@pytest.mark.slow
@criterion(8, "pseudo error non-decreasing over sigma deciles (<= 1 inversion)")
def test_criterion_08_pseudo_gating(trend_run, record_property):
    runs, _ = trend_run
    inv = []
    for r in runs:
        ps, truth, cells = r["pseudo"]
        _, mae, _ = pseudo_accuracy_by_sigma(ps, truth, cells, n_buckets=10)
        inv.append(count_inversions(mae))
        print(f"criterion 8 seed {r['seed']}: decile MAE {np.round(mae, 4).tolist()}")
    record_property("measured", f"inversions per seed {inv}")
    assert max(inv) <= 1


@criterion(9, "baseline fixtures and forward/backward duality")
def test_criterion_09_baselines(record_property):
    v = np.array([0.0, 5.0, 0.0, 0.0, 7.0])[:, None]
    m = np.array([0.0, 1.0, 0.0, 0.0, 1.0])[:, None]
    assert np.array_equal(forward_fill(v, m)[:, 0], [5, 5, 5, 5, 7])
    assert np.array_equal(backward_fill(v, m)[:, 0], [5, 5, 7, 7, 7])
    rng = np.random.default_rng(0)
    full = rng.normal(size=(6, 3))
    mm = np.ones_like(full)
    mm[1, 2] = mm[3, 0] = 0
    corpus = np.stack([full, rng.normal(size=(6, 3))])
    assert np.array_equal(knn_impute(full * mm, mm, corpus, np.ones_like(corpus), KnnConfig(k=1)), full)
    two = knn_impute(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]),
                     np.array([[[2.0, 2.0]], [[0.0, 4.0]]]), np.ones((2, 1, 2)), KnnConfig(k=2))
    assert two[0, 1] == 3.0
    for _ in range(100):
        T, D = int(rng.integers(1, 30)), int(rng.integers(1, 5))
        mk = (rng.random((T, D)) > rng.random()).astype(float)
        x = rng.normal(size=(T, D)) * mk
        assert np.array_equal(backward_fill(x, mk), forward_fill(x[::-1], mk[::-1])[::-1])
    record_property("measured", "fixtures exact, 100 duality series")


@criterion(10, "data pipeline: split counts, normalization, holdout disjointness")
def test_criterion_10_data_pipeline(record_property):
    assert split_counts(100) == (50, 25, 25)
    rng = np.random.default_rng(0)
    ds = synthetic_sinusoids(n_windows=100, T=48, D=4, seed=5)
    ds.values = ds.values * [3.0, 0.1, 20.0, 1.0] + [10.0, -1.0, 0.0, 4.0]
    ds.mask = (rng.random(ds.values.shape) > 0.3).astype(float)
    ds.values *= ds.mask
    s = split(ds)
    assert (len(s.train), len(s.val), len(s.test)) == (50, 25, 25)
    worst_mu = worst_sd = 0.0
    for d in range(4):
        obs = s.train.values[..., d][s.train.mask[..., d] > 0]
        worst_mu = max(worst_mu, abs(obs.mean()))
        worst_sd = max(worst_sd, abs(obs.std() - 1))
    assert worst_mu < 1e-9 and worst_sd < 1e-9
    for i in range(100):
        ev = inject_missing(s.train.values, s.train.mask, float(rng.uniform(1, 99)), seed=i)
        assert not np.any(ev.holdout * ev.train_mask)
    record_property("measured", f"|mu| {worst_mu:.1e}, |std-1| {worst_sd:.1e}, 100 injections")
