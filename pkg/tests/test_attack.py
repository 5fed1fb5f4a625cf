import numpy as np
import pytest

from unlearn_rec.attack import (AttackReport, GBTAttacker, MLPAttacker,
                                attack_embeddings, auc_score, evaluate_attack,
                                split_users, train_gbt_attacker,
                                train_mlp_attacker)
from unlearn_rec.errors import ConfigError, DataError

from conftest import make_labels


def brute_force_auc(scores, y):
    """Pair enumeration: P(score_pos > score_neg) with ties counted half."""
    pos = [s for s, t in zip(scores, y) if t == 1]
    neg = [s for s, t in zip(scores, y) if t == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class _StubClassifier:
    def __init__(self, proba):
        self.proba = np.asarray(proba, dtype=np.float64)

    def predict_proba(self, rows):
        return self.proba


# ---------------------------------------------------------------------------
# split_users

def test_split_users_stratified_counts():
    labels = make_labels([0] * 5 + [1] * 5)
    tr, te = split_users(labels, 0.8, seed=0)
    assert len(tr) == 8 and len(te) == 2
    assert (labels.labels[tr] == 0).sum() == 4
    assert (labels.labels[te] == 0).sum() == 1
    assert not set(tr.tolist()) & set(te.tolist())
    assert set(tr.tolist()) | set(te.tolist()) == set(range(10))


def test_split_users_deterministic():
    labels = make_labels([0] * 6 + [1] * 6)
    a = split_users(labels, 0.7, seed=3)
    b = split_users(labels, 0.7, seed=3)
    assert (a[0] == b[0]).all() and (a[1] == b[1]).all()


def test_split_users_full_fraction_rejected():
    labels = make_labels([0, 0, 1, 1])
    with pytest.raises(ConfigError):
        split_users(labels, 1.0, seed=0)


def test_split_users_small_class_rejected():
    labels = make_labels([0, 0, 0, 1])
    with pytest.raises(DataError):
        split_users(labels, 0.5, seed=0)


def test_split_users_keeps_both_sides_nonempty():
    labels = make_labels([0, 0, 1, 1])
    tr, te = split_users(labels, 0.9, seed=1)
    for c in (0, 1):
        assert (labels.labels[tr] == c).any() and (labels.labels[te] == c).any()


# ---------------------------------------------------------------------------
# MLP attacker

def test_mlp_separable_toy_perfect_accuracy():
    x = np.zeros((40, 8))
    x[:20, 0] = 1.0
    x[20:, 0] = -1.0
    y = np.array([1] * 20 + [0] * 20)
    clf = train_mlp_attacker(x, y, seed=0, epochs=50)
    assert (clf.predict(x) == y).mean() == 1.0


def test_mlp_shuffled_labels_near_chance(rng):
    x = rng.normal(size=(200, 16))
    y = rng.permutation(np.array([0, 1] * 100))
    tr = np.arange(160)
    te = np.arange(160, 200)
    clf = train_mlp_attacker(x[tr], y[tr], seed=1, epochs=60)
    auc = auc_score(clf.predict_proba(x[te])[:, 1], y[te])
    assert 0.3 <= auc <= 0.7


def test_mlp_single_class_errors():
    with pytest.raises(DataError):
        train_mlp_attacker(np.ones((5, 3)), np.zeros(5, dtype=int), seed=0)


def test_mlp_deterministic(rng):
    x = rng.normal(size=(30, 6))
    y = (x[:, 0] > 0).astype(int)
    a = train_mlp_attacker(x, y, seed=4, epochs=20)
    b = train_mlp_attacker(x, y, seed=4, epochs=20)
    assert (a.predict_proba(x) == b.predict_proba(x)).all()


def test_mlp_proba_rows_sum_to_one(rng):
    x = rng.normal(size=(25, 5))
    y = (x[:, 1] > 0).astype(int)
    clf = train_mlp_attacker(x, y, seed=0, epochs=10)
    np.testing.assert_allclose(clf.predict_proba(x).sum(axis=1), 1.0, rtol=1e-12)


# ---------------------------------------------------------------------------
# GBT attacker

def test_gbt_axis_aligned_toy(rng):
    x = rng.normal(size=(60, 5))
    y = (x[:, 0] > 0).astype(int)
    clf = train_gbt_attacker(x, y, n_rounds=10)
    assert (clf.predict(x) == y).mean() == 1.0


def test_gbt_constant_features_predict_prior():
    x = np.ones((20, 4))
    y = np.array([1] * 6 + [0] * 14)
    clf = train_gbt_attacker(x, y)
    np.testing.assert_allclose(clf.predict_proba(x)[:, 1], 0.3, atol=1e-8)


def test_gbt_zero_rounds_auc_half(rng):
    x = rng.normal(size=(30, 4))
    y = np.array([0, 1] * 15)
    clf = train_gbt_attacker(x, y, n_rounds=0)
    assert auc_score(clf.predict_proba(x)[:, 1], y) == 0.5


def test_gbt_single_class_errors():
    with pytest.raises(DataError):
        train_gbt_attacker(np.ones((5, 3)), np.ones(5, dtype=int))


def test_gbt_multiclass_rejected():
    with pytest.raises(DataError):
        train_gbt_attacker(np.ones((6, 3)), np.array([0, 1, 2, 0, 1, 2]))


def test_gbt_deterministic(rng):
    x = rng.normal(size=(40, 6))
    y = (x[:, 2] > 0.3).astype(int)
    a = train_gbt_attacker(x, y, n_rounds=20)
    b = train_gbt_attacker(x, y, n_rounds=20)
    assert (a.predict_proba(x) == b.predict_proba(x)).all()


def test_gbt_improves_with_rounds(rng):
    x = rng.normal(size=(80, 4))
    y = ((x[:, 0] + 0.5 * x[:, 1]) > 0).astype(int)
    few = train_gbt_attacker(x, y, n_rounds=2)
    many = train_gbt_attacker(x, y, n_rounds=40)
    assert (many.predict(x) == y).mean() >= (few.predict(x) == y).mean()


# ---------------------------------------------------------------------------
# evaluation metrics

def test_evaluate_clean_separation():
    proba = np.array([[0.1, 0.9], [0.2, 0.8], [0.9, 0.1], [0.8, 0.2]])
    rep = evaluate_attack(_StubClassifier(proba), np.zeros((4, 1)),
                          np.array([1, 1, 0, 0]))
    assert rep.auc == 1.0 and rep.accuracy == 1.0
    assert rep.precision == 1.0 and rep.recall == 1.0


def test_evaluate_all_scores_equal_gives_half_auc():
    proba = np.full((6, 2), 0.5)
    rep = evaluate_attack(_StubClassifier(proba), np.zeros((6, 1)),
                          np.array([1, 0, 1, 0, 1, 0]))
    assert rep.auc == 0.5


def test_evaluate_hand_confusion_matrix():
    # preds [1, 0], truth [1, 1]
    proba = np.array([[0.2, 0.8], [0.7, 0.3]])
    rep = evaluate_attack(_StubClassifier(proba), np.zeros((2, 1)),
                          np.array([1, 1]))
    assert rep.accuracy == 0.5
    # precision: class0 0/1, class1 1/1 -> macro 0.5
    assert rep.precision == 0.5
    # recall: class1 1/2 = 0.5; class0 has no truth members -> 0 -> macro 0.25
    assert rep.recall == 0.25
    assert rep.auc is None  # single-class truth


def test_evaluate_empty_prediction_class_precision_zero():
    # everything predicted class 1; class 0 never predicted
    proba = np.array([[0.1, 0.9]] * 4)
    rep = evaluate_attack(_StubClassifier(proba), np.zeros((4, 1)),
                          np.array([1, 0, 1, 0]))
    assert rep.precision == pytest.approx(0.25)  # (0 + 0.5) / 2
    assert rep.auc == 0.5


def test_metrics_within_bounds(rng):
    for _ in range(10):
        n = int(rng.integers(4, 30))
        proba1 = rng.random(n)
        proba = np.stack([1 - proba1, proba1], axis=1)
        y = rng.integers(0, 2, size=n)
        if len(np.unique(y)) < 2:
            continue
        rep = evaluate_attack(_StubClassifier(proba), np.zeros((n, 1)), y)
        for v in (rep.accuracy, rep.precision, rep.recall, rep.auc):
            assert 0.0 <= v <= 1.0


def test_auc_matches_pair_enumeration(rng):
    for _ in range(20):
        n_pos = int(rng.integers(1, 50))
        n_neg = int(rng.integers(1, 50))
        y = np.array([1] * n_pos + [0] * n_neg)
        scores = rng.choice(np.linspace(0, 1, 11), size=n_pos + n_neg)  # force ties
        assert auc_score(scores, y) == brute_force_auc(scores.tolist(), y.tolist())


def test_auc_single_class_errors():
    with pytest.raises(DataError):
        auc_score(np.array([0.1, 0.2]), np.array([1, 1]))


# ---------------------------------------------------------------------------
# attack protocol

def _signal_embeddings(rng, n=240, d=8, shift=2.0):
    labels = make_labels(rng.integers(0, 2, size=n).tolist())
    x = rng.normal(size=(n, d))
    x[:, 0] += shift * (labels.labels - 0.5)
    return x, labels


def test_attack_protocol_recovers_planted_signal(rng):
    x, labels = _signal_embeddings(rng)
    reports = attack_embeddings(x, labels, seeds=(0, 1, 2))
    for rep in reports:
        assert rep.auc > 0.8
        assert len(rep.folds) == 3
        assert rep.n_train + rep.n_test == len(x)


def test_attack_label_permutation_sanity(rng):
    x, labels = _signal_embeddings(rng, n=260, shift=0.0)
    reports = attack_embeddings(x, labels, seeds=(0, 1, 2))
    for rep in reports:
        assert 0.35 <= rep.auc <= 0.65


def test_attack_reports_deterministic(rng):
    x, labels = _signal_embeddings(rng, n=60)
    a = attack_embeddings(x, labels, kinds=("mlp",), seeds=(0, 1))
    b = attack_embeddings(x, labels, kinds=("mlp",), seeds=(0, 1))
    assert a == b


def test_attack_unknown_kind_rejected(rng):
    x, labels = _signal_embeddings(rng, n=40)
    with pytest.raises(ConfigError):
        attack_embeddings(x, labels, kinds=("svm",), seeds=(0,))


def test_attack_folds_partition_users(rng):
    x, labels = _signal_embeddings(rng, n=50)
    rep = attack_embeddings(x, labels, kinds=("gbt",), seeds=(0, 1))[0]
    for fold in rep.folds:
        assert fold.n_train + fold.n_test == len(x)
