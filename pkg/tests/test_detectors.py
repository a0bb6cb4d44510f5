import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permevade.core import DEFAULT_SYNTH, SynthSpec, synth_dataset
from permevade.detectors import (ALGORITHMS, DetectorSpec, ImportanceRanking, Metrics, accuracy,
                                 cross_validate, evaluate, feature_importance, load_model,
                                 predict_benign_prob, save_model, select_top_k, train_model)
from permevade.detectors.linear import LogisticRegression
from permevade.detectors.mlp import init_params, loss_and_grad
from permevade.detectors.trees import DecisionTree, grow_tree
from permevade.errors import IndexOutOfRange, SingleClassDataset, UnsupportedModel, VocabularyMismatch

from helpers import make_dataset, table_detector
from oracles import consistent_partition_proba


@pytest.fixture(scope="module")
def corpus():
    return synth_dataset(DEFAULT_SYNTH)


@pytest.fixture(scope="module")
def zoo(corpus):
    return {alg: train_model(DetectorSpec(alg, seed=3), corpus, model_id=alg) for alg in ALGORITHMS}


# ------------------------------------------------------------ decision tree


def _dedup_consistent(X, y):
    """Drop rows whose vector also appears with the other label."""
    keys = [r.tobytes() for r in X]
    labels = {}
    for key, label in zip(keys, y):
        labels.setdefault(key, set()).add(int(label))
    keep = [i for i, key in enumerate(keys) if len(labels[key]) == 1]
    return X[keep], y[keep]


def test_dt_fits_consistent_data_exactly(corpus):
    X, y = _dedup_consistent(corpus.X, corpus.y)
    ds = make_dataset(X, y)
    assert evaluate(train_model(DetectorSpec("DT"), ds), ds).accuracy == 1.0


def test_dt_fits_xor():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 2)
    y = X[:, 0] ^ X[:, 1]
    m = train_model(DetectorSpec("DT"), make_dataset(X, y))
    assert evaluate(m, make_dataset(X, y)).accuracy == 1.0


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_dt_matches_partition_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (n, k)).astype(np.uint8)
    y = rng.integers(0, 2, n)
    tree = DecisionTree().fit(X, y)
    assert np.allclose(tree.malware_proba(X), consistent_partition_proba(X, y), atol=1e-12)


def test_dt_single_class_leaves():
    X = np.array([[0, 1], [1, 0], [1, 1]])
    all_benign = DecisionTree().fit(X, np.zeros(3))
    all_malware = DecisionTree().fit(X, np.ones(3))
    probe = np.array([[0, 0], [1, 1], [0, 1]])
    assert np.all(1 - all_benign.malware_proba(probe) == 1.0)
    assert np.all(1 - all_malware.malware_proba(probe) == 0.0)


def test_train_model_rejects_single_class():
    with pytest.raises(SingleClassDataset):
        train_model(DetectorSpec("DT"), make_dataset([[0], [1]], [0, 0]))


# ---------------------------------------------------------- configuration


def test_ensemble_sizes(zoo):
    assert len(zoo["RF"].estimator.trees) == 100
    assert len(zoo["ET"].estimator.trees) == 10
    assert len(zoo["AB"].estimator.trees) == 100
    assert len(zoo["GB"].estimator.trees) == 100


def test_gb_depth_limit(zoo):
    assert max(t.depth for t in zoo["GB"].estimator.trees) <= 3


def test_dnn_shape(zoo):
    p = zoo["DNN"].estimator.params_
    assert p["W1"].shape == (10, 100)
    assert p["W2"].shape == (100, 1)


def test_spec_validation():
    with pytest.raises(ValueError):
        DetectorSpec("RF", {"n_estimators": 0})
    with pytest.raises(ValueError):
        DetectorSpec("GB", {"learning_rate": -1.0})
    with pytest.raises(ValueError):
        DetectorSpec("KNN")
    with pytest.raises(ValueError):
        DetectorSpec("LR", {"depth": 3})


def test_et_zero_depth_means_unlimited(corpus):
    m = train_model(DetectorSpec("ET", seed=1), corpus)
    assert max(t.depth for t in m.estimator.trees) > 1


# --------------------------------------------------------- P_b contract


def test_probability_fuzz_all_models(zoo):
    X = np.random.default_rng(0).integers(0, 2, (10_000, 10)).astype(np.uint8)
    for alg, m in zoo.items():
        p = m.benign_proba(X)
        assert p.shape == (10_000,)
        assert np.all(np.isfinite(p)), alg
        assert np.all((p >= 0) & (p <= 1)), alg


def test_length_mismatch(zoo):
    with pytest.raises(VocabularyMismatch):
        predict_benign_prob(zoo["LR"], np.zeros(9))


def test_lr_zero_weights_is_half():
    lr = LogisticRegression.from_params({"coef": [0.0] * 5, "intercept": 0.0})
    assert np.all(lr.benign_proba(np.eye(5)) == 0.5)


def test_linear_margin_monotone(zoo):
    for alg in ("LR", "SVM"):
        est = zoo[alg].estimator
        rng = np.random.default_rng(1)
        X = rng.integers(0, 2, (200, 10)).astype(np.uint8)
        for j in np.flatnonzero(est.coef_ > 0):
            lo, hi = X.copy(), X.copy()
            lo[:, j], hi[:, j] = 0, 1
            assert np.all(est.margin(hi) >= est.margin(lo))


def test_predictions_deterministic(corpus):
    probe = np.random.default_rng(2).integers(0, 2, (50, 10))
    for alg in ALGORITHMS:
        a = train_model(DetectorSpec(alg, seed=5), corpus).benign_proba(probe)
        b = train_model(DetectorSpec(alg, seed=5), corpus).benign_proba(probe)
        assert np.array_equal(a, b), alg


def test_models_beat_chance(zoo, corpus):
    for alg, m in zoo.items():
        assert evaluate(m, corpus).accuracy > 0.7, alg


def test_serialization_round_trip(zoo, tmp_path):
    probe = np.random.default_rng(4).integers(0, 2, (300, 10))
    for alg, m in zoo.items():
        save_model(m, tmp_path / f"{alg}.json")
        back = load_model(tmp_path / f"{alg}.json")
        assert back.model_id == alg
        assert np.array_equal(back.benign_proba(probe), m.benign_proba(probe)), alg
        save_model(back, tmp_path / f"{alg}.2.json")
        assert (tmp_path / f"{alg}.json").read_bytes() == (tmp_path / f"{alg}.2.json").read_bytes()
        assert json.loads((tmp_path / f"{alg}.json").read_text())["spec"]["algorithm"] == alg


# ------------------------------------------------------------ MLP gradient


def test_mlp_gradient_check():
    rng = np.random.default_rng(0)
    params = init_params(10, 100, rng)
    X = rng.integers(0, 2, (20, 10)).astype(float)
    y = rng.integers(0, 2, 20).astype(float)
    _, grads = loss_and_grad(params, X, y, alpha=1e-2)
    h = 1e-6
    for name, value in params.items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + h
            up, _ = loss_and_grad(params, X, y, 1e-2)
            value[idx] = old - h
            down, _ = loss_and_grad(params, X, y, 1e-2)
            value[idx] = old
            num[idx] = (up - down) / (2 * h)
        rel = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-12)
        assert rel <= 1e-4, (name, rel)


# ----------------------------------------------------------------- metrics


def test_accuracy_arithmetic():
    assert accuracy(tp=4, tn=4, fp=1, fn=1) == 0.8
    m = Metrics(tp=4, fp=1, tn=4, fn=1)
    assert m.accuracy == 0.8
    assert m.to_dict()["accuracy"] == 0.8


def test_perfect_model_on_separable_data():
    ds = synth_dataset(SynthSpec(40, 40, 4, 4, 0.0, seed=2, strength=(1.0, 1.0)))
    m = evaluate(train_model(DetectorSpec("DT"), ds), ds)
    assert (m.fp, m.fn, m.accuracy) == (0, 0, 1.0)


def test_tie_at_threshold_is_malware():
    ds = make_dataset([[0], [1], [0], [1]], [1, 1, 0, 0])
    m = evaluate(table_detector([0.5, 0.5]), ds)
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 2, 0, 0)
    assert m.accuracy == 0.5


def test_cross_validate_dt_on_noiseless_rule():
    ds = synth_dataset(SynthSpec(50, 50, 6, 6, 0.0, seed=9, strength=(1.0, 1.0)))
    # separability oracle: no vector appears under both labels
    assert len(_dedup_consistent(ds.X, ds.y)[0]) == len(ds)
    res = cross_validate(DetectorSpec("DT"), ds, 5, seed=1)
    assert res.mean_accuracy == 1.0
    assert len(res.folds) == 5


def test_cross_validate_default_k():
    ds = synth_dataset(SynthSpec(20, 20, 4, 2, seed=1))
    assert len(cross_validate(DetectorSpec("LR"), ds).folds) == 5


def test_constant_predictor_on_balanced_folds(corpus):
    from permevade.core import split_kfold
    a = split_kfold(corpus, 5, seed=0)
    stub = table_detector(np.full(1 << 10, 0.9))
    accs = [evaluate(stub, corpus.take(a.test_indices(f))).accuracy for f in range(5)]
    assert np.mean(accs) == pytest.approx(0.5, abs=0.01)


# -------------------------------------------------------------- importance


def test_importance_label_equals_feature_three():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, (200, 6))
    m = train_model(DetectorSpec("RF", seed=1), make_dataset(X, X[:, 3]))
    r = feature_importance(m)
    assert r.order[0] == 3
    # with sqrt feature sampling some trees never see feature 3 at the root
    assert r.scores[3] > 0.5
    dt = feature_importance(train_model(DetectorSpec("DT"), make_dataset(X, X[:, 3])))
    assert dt.scores[3] == 1.0


def test_importance_uninformative_is_spread():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 2, (300, 5))
    r = feature_importance(train_model(DetectorSpec("RF", seed=2), make_dataset(X, rng.integers(0, 2, 300))))
    assert r.scores.max() < 0.4


def test_importance_duplicated_column_shares_score():
    ds = synth_dataset(SynthSpec(200, 200, 5, 2, 0.05, seed=8))
    base = feature_importance(train_model(DetectorSpec("RF", seed=0), ds)).scores
    Xd = np.column_stack([ds.X, ds.X[:, 0]])
    dup = feature_importance(train_model(DetectorSpec("RF", seed=0), make_dataset(Xd, ds.y))).scores
    assert dup[0] + dup[5] == pytest.approx(base[0], abs=0.1)


def test_importance_normalized(zoo):
    for alg in ("DT", "RF", "ET", "AB", "GB"):
        s = feature_importance(zoo[alg]).scores
        assert np.all(s >= 0)
        assert s.sum() == pytest.approx(1.0, abs=1e-9)


def test_importance_needs_trees(zoo):
    with pytest.raises(UnsupportedModel):
        feature_importance(zoo["LR"])


def test_select_top_k():
    r = ImportanceRanking.from_scores([0.5, 0.3, 0.2])
    assert select_top_k(r, 2) == [0, 1]
    assert sorted(select_top_k(r, 3)) == [0, 1, 2]
    with pytest.raises(IndexOutOfRange):
        select_top_k(r, 4)


def test_select_top_k_ties_prefer_lower_index():
    assert select_top_k(ImportanceRanking.from_scores([0.2, 0.4, 0.4, 0.0]), 2) == [1, 2]


def test_select_top_ten_of_197():
    scores = np.random.default_rng(0).random(197)
    top = select_top_k(ImportanceRanking.from_scores(scores / scores.sum()), 10)
    assert len(top) == 10
    assert (1 << 10) * (10 + 1) == 11_264


def test_grow_tree_rejects_unknown_criterion():
    with pytest.raises(ValueError):
        grow_tree(np.zeros((2, 1)), [0, 1], criterion="entropy")
