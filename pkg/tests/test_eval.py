import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cadem.eval import (LeakError, Metrics, ari, check_split, clustering_scores, combiner_probe,
                        config_hash, confusion_matrix, f1_scores, kmeans, linear_probe, nested_cv,
                        nmi, plan_folds, prediction_entropy, stratified_kfold, train_probe)
from cadem.eval.clustering import kmeans_pp_init, lloyd

from oracles import ari_pairs, f1_by_counting, nmi_direct


# --- metrics against brute-force oracles ---------------------------------

def metric_worst_gap(n_pairs=200, seed=0) -> float:
    """Largest |implementation - oracle| over ARI, NMI and both F1 scores."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(2, 13))
        ka, kb = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        a, b = rng.integers(0, ka, n).tolist(), rng.integers(0, kb, n).tolist()
        worst = max(worst, abs(ari(a, b) - ari_pairs(a, b)), abs(nmi(a, b) - nmi_direct(a, b)))
        k = max(ka, kb)
        got = f1_scores(a, b, k)
        ref = f1_by_counting(a, b, k)
        worst = max(worst, abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    return worst


def test_metrics_match_oracles():
    assert metric_worst_gap() < 1e-12


labelings = st.lists(st.integers(0, 3), min_size=2, max_size=12)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_ari_nmi_symmetric_and_permutation_invariant(data):
    a = data.draw(labelings)
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    assert ari(a, b) == ari(b, a)
    assert nmi(a, b) == nmi(b, a)
    perm = data.draw(st.permutations(range(4)))
    pa = [perm[x] for x in a]
    assert ari(pa, b) == pytest.approx(ari(a, b), abs=1e-12)
    assert nmi(pa, b) == pytest.approx(nmi(a, b), abs=1e-12)


def test_ari_examples():
    assert ari([0, 1, 1, 2], [5, 3, 3, 9]) == 1.0
    assert ari([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(ari_pairs([0, 0, 1, 1], [0, 1, 0, 1]))
    with pytest.raises(ValueError):
        ari([0], [0])
    with pytest.raises(ValueError):
        ari([0, 1], [0, 1, 1])


def test_nmi_examples():
    assert nmi([0, 0, 1, 1, 2, 2], [1, 1, 0, 0, 2, 2]) == pytest.approx(1.0)
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    a, b = [0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]
    assert nmi(a, b) == pytest.approx(nmi_direct(a, b), abs=1e-14)


def test_f1_examples():
    assert f1_scores([0, 1, 2], [0, 1, 2], 3) == (1.0, 1.0)
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    assert f1_scores(t, p, 4)[1] == pytest.approx(np.mean(t == p))
    # per class: F1 = 2/3, 2/3, 0
    assert f1_scores([0, 0, 1, 2], [0, 1, 1, 1], 3)[0] == pytest.approx((2 / 3 + 0.5 + 0) / 3)
    assert f1_scores([0, 0, 1, 2], [0, 1, 1, 1], 3) == pytest.approx(f1_by_counting([0, 0, 1, 2], [0, 1, 1, 1], 3))
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]


# --- K-means --------------------------------------------------------------

def test_kmeans_single_cluster():
    x = np.random.default_rng(0).normal(size=(20, 2))
    labels, _, centers, _ = lloyd(x, kmeans_pp_init(x, 1, np.random.default_rng(0)))
    assert np.all(labels == 0) and np.allclose(centers[0], x.mean(axis=0))


def test_kmeans_separated_clouds():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(0, 0.1, (30, 2)), rng.normal(10, 0.1, (30, 2))])
    truth = np.repeat([0, 1], 30)
    labels, _ = kmeans(x, 2, rng=rng)
    assert ari(truth, labels) == 1.0
    s = clustering_scores(x, truth, 2, runs=5, seed=0)
    assert s["ari_mean"] == 1.0 and s["ari_std"] == 0.0 and len(s["ari_runs"]) == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lloyd_inertia_non_increasing(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3))
    _, _, _, trace = lloyd(x, kmeans_pp_init(x, 4, rng))
    assert np.all(np.diff(trace) <= 1e-9)


def test_clustering_scores_deterministic():
    x = np.random.default_rng(2).normal(size=(30, 2))
    y = np.arange(30) % 3
    assert clustering_scores(x, y, 3, 4, seed=3) == clustering_scores(x, y, 3, 4, seed=3)


# --- probes ---------------------------------------------------------------

def _blobs(rng, n=60):
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 2)) * 0.3 + np.where(y[:, None] == 1, 3.0, -3.0)
    return x, y


def test_probe_separable_blobs():
    rng = np.random.default_rng(0)
    x, y = _blobs(rng)
    # perceptron oracle: the data really is linearly separable
    w = np.zeros(3)
    xa = np.hstack([x, np.ones((len(x), 1))])
    s = 2 * y - 1
    for _ in range(100):
        wrong = np.flatnonzero(s * (xa @ w) <= 0)
        if not wrong.size:
            break
        w += s[wrong[0]] * xa[wrong[0]]
    assert np.all(s * (xa @ w) > 0)
    out = linear_probe(x[::2], y[::2], x[1::2], y[1::2], 2)
    assert out["macro_f1"] >= 0.99


def test_zero_epoch_probe_uses_init():
    rng = np.random.default_rng(1)
    x, y = _blobs(rng)
    probe = train_probe(x, y, 2, epochs=0, seed=4)
    again = train_probe(x, y, 2, epochs=0, seed=4)
    assert np.array_equal(probe.w.data, again.w.data)
    assert np.array_equal(probe.predict(x), again.predict(x))


def test_shuffled_labels_near_chance():
    scores = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(150, 5))
        y = rng.permutation(np.arange(150) % 3)
        scores.append(linear_probe(x[:100], y[:100], x[100:], y[100:], 3, epochs=100, seed=seed)["macro_f1"])
    assert abs(np.mean(scores) - 1 / 3) < 0.1


def test_combiner_probe_learns_signal_from_private():
    rng = np.random.default_rng(2)
    n = 90
    y = np.arange(n) % 3
    centres = rng.normal(size=(3, 8)) * 3
    private = [centres[y] + rng.normal(size=(n, 8)) * 0.3 for _ in range(2)]
    common = rng.normal(size=(n, 8))
    train, test = np.arange(0, n, 2), np.arange(1, n, 2)
    out = combiner_probe(common, private, y, train, test, 3, epochs=150)
    assert out["macro_f1"] > 0.9


def test_prediction_entropy():
    assert np.allclose(prediction_entropy(np.full((2, 4), 0.25)), np.log(4))
    assert np.allclose(prediction_entropy(np.eye(3)), 0.0)


# --- cross-validation -----------------------------------------------------

def test_fold_sizes_and_stratification():
    y = np.repeat([0, 1, 2, 3], 25)
    folds = stratified_kfold(y, 5, np.random.default_rng(0))
    assert [len(f) for f in folds] == [20] * 5
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(100))
    y = np.array([0] * 37 + [1] * 23 + [2] * 40)
    for f in stratified_kfold(y, 5, np.random.default_rng(1)):
        for c, total in zip(*np.unique(y, return_counts=True)):
            assert abs(np.sum(y[f] == c) - total / 5) <= 1


def test_stratified_error_names_class():
    with pytest.raises(ValueError, match="class 1"):
        stratified_kfold([0] * 10 + [1] * 2, 5, np.random.default_rng(0))


def test_grouped_plan_never_splits_a_group():
    groups = np.repeat(np.arange(15), 3)
    labels = np.tile([0, 1, 2], 15)
    plan = plan_folds(labels, 5, 3, groups, seed=0)
    for fold, test in enumerate(plan.outer):
        train = plan.train_indices(fold)
        assert not set(groups[train]) & set(groups[test])
        for inner in plan.inner[fold]:
            rest = np.setdiff1d(train, inner)
            assert not set(groups[rest]) & set(groups[inner])


def test_leak_detector():
    check_split([0, 1], [2, 3])
    with pytest.raises(LeakError):
        check_split([0, 1, 2], [2, 3])
    with pytest.raises(LeakError):
        check_split([0, 1], [2, 3], groups=[0, 1, 1, 2])


def test_nested_cv_never_trains_on_test_and_picks_by_inner_score():
    y = np.repeat([0, 1], 30)
    seen = []

    def fit_predict(train, test, hyper):
        seen.append((set(train.tolist()), set(test.tolist())))
        # "good" predicts the truth, "bad" predicts constant 0
        return y[test] if hyper["name"] == "good" else np.zeros(len(test), dtype=int)

    res = nested_cv(y, fit_predict, [{"name": "bad"}, {"name": "good"}], outer_k=5, inner_k=3)
    assert all(not (tr & te) for tr, te in seen)
    assert [c["name"] for c in res.chosen] == ["good"] * 5
    mean, std = res.summary()
    assert mean["macro_f1"] == 1.0 and std["macro_f1"] == 0.0
    assert [f["n_test"] for f in res.per_fold] == [12] * 5


def test_nested_cv_ties_go_to_first_entry():
    y = np.repeat([0, 1], 15)
    res = nested_cv(y, lambda tr, te, h: y[te], [{"id": 0}, {"id": 1}], outer_k=3, inner_k=2)
    assert all(c["id"] == 0 for c in res.chosen)


# --- reports --------------------------------------------------------------

def test_metrics_report_validation_and_hash():
    m = Metrics(task="t", mean={"macro_f1": 0.5, "private0_vs_layer1": -0.02}, seed=3,
                config_hash=config_hash({"b": 1, "a": [1, 2]}))
    d = m.to_dict()
    assert set(d) >= {"task", "per_fold", "mean", "std", "config_hash", "seed"}
    assert config_hash({"a": [1, 2], "b": 1}) == d["config_hash"]
    with pytest.raises(ValueError):
        Metrics(task="t", mean={"macro_f1": 1.5})
    with pytest.raises(ValueError):
        Metrics(task="t", mean={"nmi": -0.1})
