import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clrpred.base_regressors import Dataset, LinearModel, RegressorSpec, fit_linear, mse, predict_linear
from clrpred.data_io import SyntheticSpec, generate_synthetic
from clrpred.errors import EmptyGroup, InsufficientData
from clrpred.hard_clr import (
    ClusterwiseModel,
    ConstraintSet,
    HardClrConfig,
    Partition,
    clr_objective,
    constrained_labeling_step,
    fit_hard_clr,
    initial_partition,
    labeling_step,
)


def crit(x, y, model, c, gamma):
    r = y - x @ model.w - model.b
    return r * r + gamma * float((x - c) @ (x - c))


def lloyd(X, labels, k, max_iter=500):
    """Plain Lloyd iterations; an emptied cluster takes the point farthest
    from its own centroid (among clusters that can spare one)."""
    labels = labels.copy()
    for _ in range(max_iter):
        cents = np.array([X[labels == i].mean(0) for i in range(k)])
        dist = ((X[:, None] - cents[None]) ** 2).sum(-1)
        new = np.argmin(dist, axis=1)
        for e in range(k):
            sizes = np.bincount(new, minlength=k)
            if sizes[e] == 0:
                own = dist[np.arange(len(X)), new]
                own[sizes[new] <= 1] = -np.inf
                new[int(np.argmax(own))] = e
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def blobs(seed, k=2, n_per=30, d=2):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-10, 10, size=(k, d)) + np.arange(k)[:, None] * 20
    X = np.vstack([c + rng.normal(0, 0.5, size=(n_per, d)) for c in centers])
    y = rng.normal(size=len(X))
    return Dataset(X, y)


# --- objective ------------------------------------------------------------------

def test_objective_zero_for_exact_piecewise_fit():
    X = np.array([[0.0], [1.0], [2.0], [0.0], [1.0], [2.0]])
    y = np.array([0.0, 1.0, 2.0, 5.0, 3.0, 1.0])
    labels = np.array([0, 0, 0, 1, 1, 1])
    cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=2, max_iter=1, regressor=RegressorSpec(jitter=0)),
                      initial_labels=labels)
    assert clr_objective(Dataset(X, y), cw, 0.0) == pytest.approx(0.0, abs=1e-20)


def test_objective_k1_is_n_times_mse(rng):
    X = rng.normal(size=(25, 3))
    y = rng.normal(size=25)
    cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=1))
    m = fit_linear(X, y)
    assert clr_objective(Dataset(X, y), cw, 0.0) == pytest.approx(25 * mse(y, predict_linear(m, X)), rel=1e-12)


def test_objective_four_point_hand_case():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, -1.0]])
    y = np.array([1.0, -1.0, 4.0, 0.5])
    models = [LinearModel([1.0, 0.5], 0.25), LinearModel([-1.0, 2.0], 1.0)]
    cents = np.array([[0.5, 0.5], [2.5, 0.5]])
    labels = np.array([0, 0, 1, 1])
    cw = ClusterwiseModel(models, cents, np.array([2, 2]), HardClrConfig(k=2), labels)
    gamma = 0.7
    expected = sum(crit(X[j], y[j], models[labels[j]], cents[labels[j]], gamma) for j in range(4))
    assert clr_objective(Dataset(X, y), cw, gamma) == pytest.approx(expected, abs=1e-10)
    # with a regressor, coefficient penalties are added on top
    spec = RegressorSpec("ridge", 2.0)
    pen = sum(spec.penalty(m.w) for m in models)
    assert clr_objective(Dataset(X, y), cw, gamma, spec) == pytest.approx(expected + pen, abs=1e-10)


# --- labeling ---------------------------------------------------------------------

def test_point_on_line_takes_that_cluster():
    models = [LinearModel([1.0], 0.0), LinearModel([-1.0], 3.0)]
    part = labeling_step(Dataset([[1.0]], [2.0]), models, np.zeros((2, 1)), 0.0)
    assert part.labels.tolist() == [1]


def test_huge_gamma_labels_are_nearest_centroid(rng):
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30) * 100
    cents = np.array([[-1.0, 0.0], [1.0, 0.5], [0.0, 3.0]])
    models = [LinearModel(rng.normal(size=2), rng.normal()) for _ in range(3)]
    labels = labeling_step(Dataset(X, y), models, cents, 1e12).labels
    nearest = np.argmin(((X[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(labels, nearest)


def test_labeling_five_points_brute_force():
    X = np.array([[0.0], [1.0], [2.0], [-1.0], [0.5]])
    y = np.array([0.3, 2.2, 1.0, -2.0, 0.0])
    models = [LinearModel([2.0], 0.0), LinearModel([0.0], 1.0)]
    cents = np.array([[0.2], [1.5]])
    gamma = 0.8
    labels = labeling_step(Dataset(X, y), models, cents, gamma).labels
    for j in range(5):
        costs = [crit(X[j], y[j], models[i], cents[i], gamma) for i in range(2)]
        assert labels[j] == int(np.argmin(costs))


def test_labeling_ties_go_to_lowest_index():
    models = [LinearModel([1.0], 0.0), LinearModel([1.0], 0.0)]
    assert labeling_step(Dataset([[1.0]], [1.0]), models, np.zeros((2, 1)), 0.0).labels[0] == 0


def test_constrained_singletons_match_plain_labeling(rng):
    X = rng.normal(size=(12, 2))
    y = rng.normal(size=12)
    models = [LinearModel(rng.normal(size=2), 0.0) for _ in range(3)]
    cents = rng.normal(size=(3, 2))
    cons = ConstraintSet.from_tokens(np.arange(12))
    a = constrained_labeling_step(Dataset(X, y), models, cents, 0.5, cons).labels
    b = labeling_step(Dataset(X, y), models, cents, 0.5).labels
    assert np.array_equal(a, b)


def test_constrained_single_group_takes_best_cluster(rng):
    X = rng.normal(size=(10, 1))
    y = 3 * X[:, 0] + 1
    models = [LinearModel([0.0], 0.0), LinearModel([3.0], 1.1), LinearModel([-3.0], 1.0)]
    cons = ConstraintSet.from_tokens(["g"] * 10)
    labels = constrained_labeling_step(Dataset(X, y), models, np.zeros((3, 1)), 0.0, cons).labels
    assert np.all(labels == 1)


def test_constrained_two_groups_brute_force():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    y = np.array([0.0, 1.5, 1.0, 9.0, 0.0, 10.0])
    tokens = ["a", "b", "a", "b", "a", "b"]
    models = [LinearModel([0.5], 0.0), LinearModel([2.0], 0.0)]
    cents = np.array([[1.0], [4.0]])
    gamma = 0.3
    labels = constrained_labeling_step(Dataset(X, y), models, cents, gamma, ConstraintSet.from_tokens(tokens)).labels
    for g in "ab":
        idx = [j for j, t in enumerate(tokens) if t == g]
        costs = [sum(crit(X[j], y[j], models[i], cents[i], gamma) for j in idx) for i in range(2)]
        assert {int(labels[j]) for j in idx} == {int(np.argmin(costs))}


def test_empty_group_rejected():
    cons = ConstraintSet(np.array([0, 0, 2]), ["a", "b", "c"])
    with pytest.raises(EmptyGroup):
        constrained_labeling_step(Dataset(np.ones((3, 1)), np.ones(3)), [LinearModel([1.0], 0.0)],
                                  np.zeros((1, 1)), 0.0, cons)


# --- fitting ----------------------------------------------------------------------

def test_k1_equals_global_fit(rng):
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    for gamma in (0.0, 5.0):
        cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=1, gamma=gamma))
        m = fit_linear(X, y)
        assert np.allclose(cw.models[0].w, m.w, atol=1e-8) and abs(cw.models[0].b - m.b) < 1e-8


def test_planted_lines_recovered_best_of_ten_seeds():
    ds, truth, _ = generate_synthetic(SyntheticSpec("planted_lines", 3, 300, 2, 0.0, seed=0))
    best = min(clr_objective(ds, fit_hard_clr(ds, HardClrConfig(k=3, max_iter=50, seed=s)), 0.0)
               for s in range(10))
    assert best < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_huge_gamma_matches_lloyd(seed):
    ds = blobs(seed, k=3)
    init = initial_partition(ds.n, 3, np.random.default_rng(seed))
    cw = fit_hard_clr(ds, HardClrConfig(k=3, gamma=1e12, max_iter=500, seed=seed), initial_labels=init)
    assert np.array_equal(cw.labels, lloyd(ds.X, init, 3))


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        fit_hard_clr(Dataset(np.ones((2, 1)), np.ones(2)), HardClrConfig(k=3))


def test_model_bookkeeping(rng):
    X = rng.normal(size=(60, 2))
    y = rng.normal(size=60)
    cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=4, gamma=1.0, seed=3))
    assert cw.sizes.sum() == 60 and np.all(cw.sizes > 0)
    for i in range(4):
        assert np.allclose(cw.centroids[i], X[cw.labels == i].mean(0), atol=1e-8)
    assert isinstance(cw.train_partition, Partition)
    assert cw.n_iter <= 5


def test_seed_reproducibility(rng):
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    cfg = HardClrConfig(k=3, gamma=0.5, seed=11, regressor=RegressorSpec("lasso", 0.1))
    a, b = fit_hard_clr(Dataset(X, y), cfg), fit_hard_clr(Dataset(X, y), cfg)
    assert np.array_equal(a.labels, b.labels)
    assert a.objective_history == b.objective_history
    for ma, mb in zip(a.models, b.models):
        assert np.array_equal(ma.w, mb.w)


def test_reaches_fixed_point_with_large_cap(rng):
    for seed in range(5):
        X = rng.normal(size=(80, 2))
        y = np.abs(X[:, 0]) + 0.1 * rng.normal(size=80)
        cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=3, gamma=0.1, max_iter=500, seed=seed))
        assert cw.converged
        relabel = labeling_step(Dataset(X, y), cw.models, cw.centroids, 0.1).labels
        assert np.array_equal(relabel, cw.labels) or np.bincount(relabel, minlength=3).min() == 0


# --- properties -------------------------------------------------------------------

regressors = st.sampled_from([RegressorSpec(), RegressorSpec("ridge", 1.0), RegressorSpec("lasso", 0.1),
                              RegressorSpec("lasso", 2.0)])


@given(st.integers(0, 10_000), st.integers(1, 6), st.sampled_from([0.0, 0.1, 1.0, 10.0, 100.0]), regressors,
       st.booleans())
def test_objective_non_increasing(seed, k, gamma, spec, constrained):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 80))
    X = rng.uniform(-1, 1, size=(n, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1] + 0.1 * rng.normal(size=n)
    cons = ConstraintSet.from_tokens(rng.integers(0, max(k, 8), size=n)) if constrained else None
    if cons is not None and cons.m < k:
        return
    hist = []
    fit_hard_clr(Dataset(X, y), HardClrConfig(k=k, gamma=gamma, max_iter=30, seed=seed, regressor=spec),
                 cons, callback=lambda it, labels, obj: hist.append(obj))
    for a, b in zip(hist, hist[1:]):
        assert b <= a + 1e-9 * abs(a)


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_constraint_groups_never_split(seed, k):
    rng = np.random.default_rng(seed)
    n = 60
    X = rng.uniform(-1, 1, size=(n, 2))
    y = rng.normal(size=n)
    tokens = rng.integers(0, 10, size=n)
    cons = ConstraintSet.from_tokens(tokens)
    if cons.m < k:
        return

    def check(it, labels, obj):
        for g in cons.groups:
            assert len(set(labels[g].tolist())) == 1

    cw = fit_hard_clr(Dataset(X, y), HardClrConfig(k=k, seed=seed, max_iter=20), cons, callback=check)
    assert np.all(cw.sizes > 0)


@given(st.integers(0, 1000), st.integers(1, 6), st.integers(6, 40))
def test_initial_partition_has_no_empty_cluster(seed, k, n):
    labels = initial_partition(n, k, np.random.default_rng(seed))
    assert np.bincount(labels, minlength=k).min() > 0


def test_brute_force_optimum_small_case():
    # exhaustive search over all 2-partitions of 6 points lower-bounds the fit
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(6, 1))
    y = rng.normal(size=6)
    ds = Dataset(X, y)
    spec = RegressorSpec()

    def cost(labels):
        total = 0.0
        for i in range(2):
            idx = labels == i
            m = fit_linear(X[idx], y[idx], spec=spec)
            total += float(((y[idx] - predict_linear(m, X[idx])) ** 2).sum()) + spec.penalty(m.w)
        return total

    best = min(cost(np.array(lab)) for lab in itertools.product([0, 1], repeat=6) if 0 < sum(lab) < 6)
    found = min(clr_objective(ds, cw, 0.0, spec) for cw in
                (fit_hard_clr(ds, HardClrConfig(k=2, max_iter=50, seed=s)) for s in range(20)))
    assert found >= best - 1e-12
    assert found == pytest.approx(best, abs=1e-9)
