"""Attribute-inference attackers on user embeddings.

Residual attribute leakage is measured by training classifiers on the
released embeddings: a small feed-forward network and gradient-boosted
regression trees with logistic loss (both self-contained, deterministic per
seed).  The protocol is a stratified user split repeated over seeds;
reported metrics are per-fold plus their mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dataio import AttributeLabels
from .errors import ConfigError, DataError, NumericError

ATTACKER_KINDS = ("mlp", "gbt")


def split_users(labels: AttributeLabels, train_frac: float, seed: int):
    """Stratified-by-class shuffle split of user indices."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    train_parts, test_parts = [], []
    for c in range(labels.n_classes):
        members = labels.class_indices(c)
        if len(members) < 2:
            raise DataError(f"class {labels.class_names[c]!r} has {len(members)} member(s); "
                            "need >= 2 to split")
        members = rng.permutation(members)
        k = int(train_frac * len(members))
        k = min(max(k, 1), len(members) - 1)
        train_parts.append(members[:k])
        test_parts.append(members[k:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


# ---------------------------------------------------------------------------
# MLP attacker

class MLPAttacker:
    """Feed-forward net d -> 128 -> 64 -> C with ReLU and softmax output.

    Inputs are standardized with training-set statistics; training is plain
    mini-batch gradient descent on cross-entropy.
    """

    def __init__(self, hidden=(128, 64), learning_rate: float = 0.05,
                 epochs: int = 200, batch_size: int = 32, seed: int = 0):
        self.hidden = tuple(hidden)
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.mu = None
        self.sd = None
        self.n_classes = 0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "MLPAttacker":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        classes = np.unique(y)
        if len(classes) < 2:
            raise DataError("MLP attacker needs >= 2 classes in the training rows")
        self.n_classes = int(classes.max()) + 1
        self.mu = x.mean(axis=0)
        self.sd = x.std(axis=0)
        self.sd[self.sd == 0.0] = 1.0
        x = (x - self.mu) / self.sd

        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 6]))
        sizes = (x.shape[1], *self.hidden, self.n_classes)
        self.weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
                        for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]

        n = len(x)
        for epoch in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start: start + self.batch_size]
                loss = self._step(x[idx], y[idx])
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite MLP loss at epoch {epoch}")
        return self

    def _forward(self, x: np.ndarray):
        acts = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        logits = acts[-1] @ self.weights[-1] + self.biases[-1]
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return acts, p

    def _step(self, x: np.ndarray, y: np.ndarray) -> float:
        n = len(x)
        acts, p = self._forward(x)
        loss = float(-np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean())
        delta = p.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        for layer in range(len(self.weights) - 1, -1, -1):
            gw = acts[layer].T @ delta
            gb = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ self.weights[layer].T
                delta[acts[layer] <= 0.0] = 0.0
            self.weights[layer] -= self.learning_rate * gw
            self.biases[layer] -= self.learning_rate * gb
        return loss

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = (np.asarray(x, dtype=np.float64) - self.mu) / self.sd
        _, p = self._forward(x)
        return p

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


# ---------------------------------------------------------------------------
# gradient-boosted trees attacker

class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = 0.0


def _best_split(x, g, h, reg_lambda):
    """Exact greedy split maximizing the logistic-loss gain."""
    n, d = x.shape
    g_total, h_total = g.sum(), h.sum()
    base = g_total * g_total / (h_total + reg_lambda)
    best_gain, best_feat, best_thr = 0.0, -1, 0.0
    for f in range(d):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        valid = xs[:-1] != xs[1:]  # only between distinct values
        if not valid.any():
            continue
        gr = g_total - gl
        hr = h_total - hl
        gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - base
        gain[~valid] = -np.inf
        k = int(np.argmax(gain))
        if gain[k] > best_gain + 1e-12:
            best_gain = float(gain[k])
            best_feat = f
            best_thr = 0.5 * (xs[k] + xs[k + 1])
    return best_feat, best_thr, best_gain


def _grow_tree(x, g, h, depth, max_depth, reg_lambda):
    node = _TreeNode()
    if depth < max_depth and len(x) >= 2:
        f, thr, gain = _best_split(x, g, h, reg_lambda)
        if f >= 0 and gain > 0.0:
            mask = x[:, f] <= thr
            node.feature = f
            node.threshold = thr
            node.left = _grow_tree(x[mask], g[mask], h[mask], depth + 1, max_depth, reg_lambda)
            node.right = _grow_tree(x[~mask], g[~mask], h[~mask], depth + 1, max_depth, reg_lambda)
            return node
    node.value = float(-g.sum() / (h.sum() + reg_lambda))
    return node


def _tree_predict(node, x):
    out = np.empty(len(x))
    stack = [(node, np.arange(len(x)))]
    while stack:
        nd, idx = stack.pop()
        if nd.feature < 0:
            out[idx] = nd.value
            continue
        mask = x[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


class GBTAttacker:
    """Binary gradient boosting of depth-limited trees on logistic loss.

    Second-order leaf values and split gains; no row or column sampling, so
    fits are deterministic regardless of seed.
    """

    def __init__(self, n_rounds: int = 100, max_depth: int = 4,
                 learning_rate: float = 0.1, reg_lambda: float = 1.0,
                 seed: int = 0):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.seed = seed  # kept for protocol symmetry; fitting is deterministic
        self.trees: list[_TreeNode] = []
        self.f0 = 0.0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GBTAttacker":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) < 2:
            raise DataError("GBT attacker needs >= 2 classes in the training rows")
        if classes.max() > 1:
            raise DataError("GBT attacker is binary; got more than 2 classes")
        prior = y.mean()
        self.f0 = float(np.log(prior / (1.0 - prior)))
        f = np.full(len(y), self.f0)
        self.trees = []
        for _ in range(self.n_rounds):
            p = 1.0 / (1.0 + np.exp(-f))
            g = p - y
            h = p * (1.0 - p)
            tree = _grow_tree(x, g, h, 0, self.max_depth, self.reg_lambda)
            self.trees.append(tree)
            f += self.learning_rate * _tree_predict(tree, x)
            if not np.isfinite(f).all():
                raise NumericError("non-finite GBT margin during boosting")
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        f = np.full(len(x), self.f0)
        for tree in self.trees:
            f += self.learning_rate * _tree_predict(tree, x)
        return f

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        p1 = 1.0 / (1.0 + np.exp(-self.decision_function(x)))
        return np.stack([1.0 - p1, p1], axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.decision_function(x) > 0.0).astype(np.int64)


def train_mlp_attacker(rows: np.ndarray, labels: np.ndarray, seed: int = 0,
                       **kwargs) -> MLPAttacker:
    return MLPAttacker(seed=seed, **kwargs).fit(rows, labels)


def train_gbt_attacker(rows: np.ndarray, labels: np.ndarray, seed: int = 0,
                       **kwargs) -> GBTAttacker:
    return GBTAttacker(seed=seed, **kwargs).fit(rows, labels)


# ---------------------------------------------------------------------------
# metrics

def auc_score(scores: np.ndarray, y: np.ndarray) -> float:
    """AUC by the Mann-Whitney rank statistic; ties contribute one half."""
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes in the test set")
    ranks = rankdata(scores, method="average")
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class FoldReport:
    seed: int
    accuracy: float
    precision: float
    recall: float
    auc: float | None
    n_train: int
    n_test: int


@dataclass
class AttackReport:
    kind: str
    accuracy: float
    precision: float
    recall: float
    auc: float | None
    n_train: int
    n_test: int
    folds: list[FoldReport] = field(default_factory=list)

    def flat(self) -> dict[str, object]:
        return {"kind": self.kind, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall,
                "auc": self.auc, "n_train": self.n_train, "n_test": self.n_test}


def evaluate_attack(classifier, rows: np.ndarray, y: np.ndarray,
                    seed: int = 0, n_train: int = 0) -> FoldReport:
    """Accuracy at argmax, macro precision/recall, rank-statistic AUC.

    A class never predicted contributes precision 0; a class absent from the
    truth contributes recall 0.  AUC is None when the test set is single
    class (binary scores otherwise).
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DataError("empty test set")
    proba = classifier.predict_proba(rows)
    pred = proba.argmax(axis=1)
    accuracy = float((pred == y).mean())
    n_classes = proba.shape[1]
    precisions, recalls = [], []
    for c in range(n_classes):
        tp = int(((pred == c) & (y == c)).sum())
        precisions.append(tp / int((pred == c).sum()) if (pred == c).any() else 0.0)
        recalls.append(tp / int((y == c).sum()) if (y == c).any() else 0.0)
    auc = None
    if len(np.unique(y)) >= 2 and n_classes == 2:
        auc = auc_score(proba[:, 1], y)
    return FoldReport(seed=seed, accuracy=accuracy,
                      precision=float(np.mean(precisions)),
                      recall=float(np.mean(recalls)),
                      auc=auc, n_train=n_train, n_test=len(y))


def attack_embeddings(rows: np.ndarray, labels: AttributeLabels,
                      kinds=("mlp", "gbt"), seeds=(0, 1, 2, 3, 4),
                      train_frac: float = 0.8) -> list[AttackReport]:
    """Run each attacker kind over the seeds; aggregate fold means."""
    rows = np.asarray(rows, dtype=np.float64)
    reports = []
    for kind in kinds:
        if kind not in ATTACKER_KINDS:
            raise ConfigError(f"unknown attacker kind {kind!r}; expected one of {ATTACKER_KINDS}")
        folds = []
        for seed in seeds:
            tr, te = split_users(labels, train_frac, seed)
            if kind == "mlp":
                clf = train_mlp_attacker(rows[tr], labels.labels[tr], seed=seed)
            else:
                clf = train_gbt_attacker(rows[tr], labels.labels[tr], seed=seed)
            folds.append(evaluate_attack(clf, rows[te], labels.labels[te],
                                         seed=seed, n_train=len(tr)))
        aucs = [f.auc for f in folds if f.auc is not None]
        reports.append(AttackReport(
            kind=kind,
            accuracy=float(np.mean([f.accuracy for f in folds])),
            precision=float(np.mean([f.precision for f in folds])),
            recall=float(np.mean([f.recall for f in folds])),
            auc=float(np.mean(aucs)) if aucs else None,
            n_train=folds[0].n_train, n_test=folds[0].n_test,
            folds=folds))
    return reports
