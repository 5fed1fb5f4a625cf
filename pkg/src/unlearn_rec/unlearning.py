"""Post-training attribute unlearning plus in-training baselines.

The two post-training methods rewrite a trained model's user embeddings by
descending a two-component objective: a differentiable distinguishability
term between the attribute groups plus a weighted anchor that keeps the
table near its trained values.

  u2u  - mean squared distance over a fixed random cross-group matching
  d2d  - biased squared MMD with an RBF kernel between the group clouds

Baselines: `original` (identity), `retrain` (from-scratch training with the
distribution penalty in the objective), and `adv` (joint training against a
gradient-reversed attribute classifier head).

For LightGCN models every distinguishability term is measured on the
propagated user embeddings and its gradient pulled back through the graph;
only the layer-0 user table is ever updated.  Item tables are never touched
by the post-training methods.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .dataio import AttributeLabels, EvalSplit
from .errors import ConfigError, DataError, NumericError
from .recmodels import (EmbeddingModel, TrainHyperparams, init_model,
                        lightgcn_propagate, propagate_back, train)

UNLEARN_METHODS = ("original", "u2u", "d2d", "retrain", "adv")

_MMD_CLAMP_EPS = 1e-12


@dataclass
class UnlearnHyperparams:
    au_trade_off: float = 1e-6
    retrain_trade_off: float = 1.0
    steps: int = 500
    learning_rate: float = 1e-2
    mmd_bandwidth: float | str = "median"
    seed: int = 0
    # retrain: distribution-penalty optimizer steps appended to each epoch
    retrain_penalty_steps: int = 5
    # adv: classifier-head updates per recommender batch
    adv_inner_steps: int = 5
    adv_hidden: int = 64

    def validate(self):
        if self.au_trade_off < 0 or self.retrain_trade_off < 0:
            raise ConfigError("trade-off weights must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if isinstance(self.mmd_bandwidth, str):
            if self.mmd_bandwidth != "median":
                raise ConfigError(f"mmd_bandwidth must be a number or 'median', "
                                  f"got {self.mmd_bandwidth!r}")
        elif self.mmd_bandwidth <= 0:
            raise ConfigError("mmd_bandwidth must be > 0")


@dataclass
class UnlearnResult:
    model: EmbeddingModel
    wall_time_seconds: float
    # (step, distinguishability term, regularization/recommendation term)
    trace: list[tuple[int, float, float]]
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# distinguishability terms and their gradients

def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    sq = aa + bb - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def mmd_rbf_sq(x: np.ndarray, y: np.ndarray, bandwidth: float) -> float:
    """Biased squared-MMD estimator with k(a,b) = exp(-|a-b|^2 / (2 sigma^2)).

    Tiny negative values from rounding are clamped to zero.
    """
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    y = np.ascontiguousarray(np.atleast_2d(np.asarray(y, dtype=np.float64)))
    # canonical argument order makes the float result exactly symmetric
    if (x.shape[0], x.tobytes()) > (y.shape[0], y.tobytes()):
        x, y = y, x
    val, _, _ = mmd_rbf_sq_grad(x, y, bandwidth, need_grad=False)
    return val


def mmd_rbf_sq_grad(x: np.ndarray, y: np.ndarray, bandwidth: float,
                    need_grad: bool = True):
    """Squared MMD plus gradients w.r.t. both sample sets."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(x) < 1 or len(y) < 1:
        raise DataError("MMD needs at least one sample on each side")
    if not bandwidth > 0:
        raise ConfigError(f"bandwidth must be > 0, got {bandwidth}")
    s2 = 2.0 * bandwidth * bandwidth
    kxx = np.exp(-_sq_dists(x, x) / s2)
    kyy = np.exp(-_sq_dists(y, y) / s2)
    kxy = np.exp(-_sq_dists(x, y) / s2)
    val = float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())
    if val < 0.0:
        val = 0.0 if val > -_MMD_CLAMP_EPS else val  # real negatives would be a bug
    if not need_grad:
        return val, None, None
    n, m = len(x), len(y)
    inv = 2.0 / (bandwidth * bandwidth)
    # d/dx_i exp(-|x_i - z_j|^2 / 2s^2) = k_ij (z_j - x_i) / s^2
    gx = (inv / (n * n)) * (kxx @ x - kxx.sum(axis=1)[:, None] * x)
    gx -= (inv / (n * m)) * (kxy @ y - kxy.sum(axis=1)[:, None] * x)
    gy = (inv / (m * m)) * (kyy @ y - kyy.sum(axis=1)[:, None] * y)
    gy -= (inv / (n * m)) * (kxy.T @ x - kxy.sum(axis=0)[:, None] * y)
    return val, gx, gy


def median_heuristic_bandwidth(rows: np.ndarray, max_rows: int = 2048,
                               seed: int = 0) -> float:
    """Median pairwise Euclidean distance over the pooled rows.

    Subsamples deterministically above `max_rows` to bound the O(n^2) cost.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) > max_rows:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        rows = rows[rng.choice(len(rows), size=max_rows, replace=False)]
    sq = _sq_dists(rows, rows)
    iu = np.triu_indices(len(rows), k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    if not med > 0:
        raise NumericError("median pairwise distance is zero; cannot set RBF bandwidth")
    return med


def make_pairing(labels: AttributeLabels, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random one-to-one matching across the two classes; larger class subsampled."""
    if labels.n_classes != 2:
        raise DataError(f"pairing needs exactly 2 classes, got {labels.n_classes}")
    a = labels.class_indices(0)
    b = labels.class_indices(1)
    if len(a) == 0 or len(b) == 0:
        raise DataError("both attribute classes must be nonempty")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    a = rng.permutation(a)
    b = rng.permutation(b)
    p = min(len(a), len(b))
    return a[:p], b[:p]


def u2u_value_grad(user_emb: np.ndarray, pair_a: np.ndarray, pair_b: np.ndarray):
    """Mean squared distance over matched pairs, plus gradient on the table."""
    diff = user_emb[pair_a] - user_emb[pair_b]
    p = len(pair_a)
    val = float((diff * diff).sum() / p)
    grad = np.zeros_like(user_emb)
    grad[pair_a] += (2.0 / p) * diff
    grad[pair_b] -= (2.0 / p) * diff
    return val, grad


def u2u_distinguishability(user_emb: np.ndarray, labels: AttributeLabels,
                           pairing_seed: int) -> float:
    """Mean squared cross-class distance under a seeded random matching."""
    a, b = make_pairing(labels, pairing_seed)
    val, _ = u2u_value_grad(np.asarray(user_emb, dtype=np.float64), a, b)
    return val


def regularization_loss(user_emb: np.ndarray, user_emb_original: np.ndarray) -> float:
    """Squared Frobenius distance to the pre-unlearning table."""
    val, _ = regularization_value_grad(user_emb, user_emb_original)
    return val


def regularization_value_grad(user_emb: np.ndarray, user_emb_original: np.ndarray):
    if user_emb.shape != user_emb_original.shape:
        raise DataError(f"shape mismatch {user_emb.shape} vs {user_emb_original.shape}")
    diff = user_emb - user_emb_original
    return float((diff * diff).sum()), 2.0 * diff


class Adam:
    """Plain Adam; step() returns the update to subtract from the parameters."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# the post-training loop

def _user_finals(model: EmbeddingModel, adj):
    if model.kind == "mf":
        return model.user_emb
    return lightgcn_propagate(model, adj)[0]


def _finals_grad_to_table(grad_finals: np.ndarray, model: EmbeddingModel, adj):
    """Map a gradient on propagated user rows back onto the layer-0 user table."""
    if model.kind == "mf":
        return grad_finals
    g = np.zeros((model.n_users + model.n_items, model.d))
    g[: model.n_users] = grad_finals
    return propagate_back(g, adj, model.lgcn_layers)[: model.n_users]


def run_unlearn(model: EmbeddingModel, labels: AttributeLabels, method: str,
                hp: UnlearnHyperparams, split: EvalSplit | None = None,
                hp_train: TrainHyperparams | None = None,
                adj: sp.csr_matrix | None = None) -> UnlearnResult:
    """Apply one unlearning method to a trained model.

    u2u and d2d rewrite the user table only; retrain and adv train from
    scratch and need `split` plus `hp_train`.
    """
    if method not in UNLEARN_METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {UNLEARN_METHODS}")
    hp.validate()
    if len(labels.labels) != model.n_users:
        raise DataError("attribute labels not aligned with the user table")

    if method == "original":
        t0 = time.perf_counter()
        out = model.copy()
        return UnlearnResult(model=out, wall_time_seconds=time.perf_counter() - t0,
                             trace=[])
    if method in ("retrain", "adv"):
        if split is None or hp_train is None:
            raise ConfigError(f"method {method!r} needs the training split and hyperparams")
        fn = retrain_with_penalty if method == "retrain" else adv_in_training
        return fn(split, labels, hp_train, hp, adj=adj)

    if model.kind == "lightgcn" and adj is None:
        raise ConfigError("unlearning a lightgcn model needs the normalized adjacency")
    if labels.n_classes != 2:
        raise DataError(f"u2u/d2d expect 2 attribute classes, got {labels.n_classes}")

    t0 = time.perf_counter()
    work = model.copy()
    anchor = work.user_emb.copy()
    in_a = labels.labels == 0
    in_b = ~in_a

    pair_a = pair_b = None
    bandwidth = None
    if method == "u2u":
        pair_a, pair_b = make_pairing(labels, hp.seed)
    else:
        finals0 = _user_finals(work, adj)
        bandwidth = (median_heuristic_bandwidth(finals0, seed=hp.seed)
                     if hp.mmd_bandwidth == "median" else float(hp.mmd_bandwidth))

    opt = Adam(hp.learning_rate)
    trace: list[tuple[int, float, float]] = []
    for step in range(hp.steps + 1):
        finals = _user_finals(work, adj)
        if method == "u2u":
            dist, gdist_f = u2u_value_grad(finals, pair_a, pair_b)
        else:
            dist, ga, gb = mmd_rbf_sq_grad(finals[in_a], finals[in_b], bandwidth)
            gdist_f = np.zeros_like(finals)
            gdist_f[in_a] = ga
            gdist_f[in_b] = gb
        reg, greg = regularization_value_grad(work.user_emb, anchor)
        if not (np.isfinite(dist) and np.isfinite(reg)):
            raise NumericError(f"non-finite unlearning loss at step {step}")
        trace.append((step, dist, reg))
        if step == hp.steps:
            break
        grad = _finals_grad_to_table(gdist_f, work, adj) + hp.au_trade_off * greg
        work.user_emb -= opt.step(grad)

    return UnlearnResult(model=work, wall_time_seconds=time.perf_counter() - t0,
                         trace=trace, extra={"bandwidth": bandwidth})


# ---------------------------------------------------------------------------
# in-training baselines

def retrain_with_penalty(split: EvalSplit, labels: AttributeLabels,
                         hp_train: TrainHyperparams, hp: UnlearnHyperparams,
                         adj: sp.csr_matrix | None = None,
                         kind: str = "mf", lgcn_layers: int = 3) -> UnlearnResult:
    """From-scratch training whose objective adds the distribution penalty.

    After each epoch's BPR batches the user table takes `retrain_penalty_steps`
    optimizer steps on the weighted squared MMD between the attribute groups,
    so the penalty is part of every epoch's objective.  The penalty step size
    scales with retrain_trade_off; zero disables it exactly.
    """
    hp.validate()
    if labels.n_classes != 2:
        raise DataError(f"retrain expects 2 attribute classes, got {labels.n_classes}")
    lam = hp.retrain_trade_off
    t0 = time.perf_counter()
    model = init_model(kind, split.train.n_users, split.train.n_items, hp_train,
                       lgcn_layers=lgcn_layers)
    in_a = labels.labels == 0
    in_b = ~in_a
    penalty_trace: list[float] = []
    epoch_hook = None
    if lam > 0 and hp.retrain_penalty_steps > 0:
        opt = Adam(hp.learning_rate * lam)

        def epoch_hook(m: EmbeddingModel):
            finals = _user_finals(m, adj)
            bw = (median_heuristic_bandwidth(finals, seed=hp.seed)
                  if hp.mmd_bandwidth == "median" else float(hp.mmd_bandwidth))
            for _ in range(hp.retrain_penalty_steps):
                finals = _user_finals(m, adj)
                dist, ga, gb = mmd_rbf_sq_grad(finals[in_a], finals[in_b], bw)
                gf = np.zeros_like(finals)
                gf[in_a] = ga
                gf[in_b] = gb
                m.user_emb -= opt.step(_finals_grad_to_table(gf, m, adj))
            penalty_trace.append(dist)

    trained, losses = train(model, split, hp_train, adj=adj, epoch_hook=epoch_hook)
    wall = time.perf_counter() - t0
    trace = [(e, penalty_trace[e] if penalty_trace else 0.0, bpr)
             for e, bpr in enumerate(losses)]
    return UnlearnResult(model=trained, wall_time_seconds=wall, trace=trace)


class _AdversaryHead:
    """One-hidden-layer softmax classifier used as the in-training adversary."""

    def __init__(self, d: int, n_classes: int, hidden: int, lr: float, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
        self.w1 = rng.standard_normal((d, hidden)) * np.sqrt(2.0 / d)
        self.b1 = np.zeros(hidden)
        self.w2 = rng.standard_normal((hidden, n_classes)) * np.sqrt(2.0 / hidden)
        self.b2 = np.zeros(n_classes)
        self.opts = [Adam(lr) for _ in range(4)]

    def forward(self, x: np.ndarray):
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        logits = h @ self.w2 + self.b2
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return h, p

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy; returns (loss, param grads, grad w.r.t. x)."""
        n = len(x)
        h, p = self.forward(x)
        ce = float(-np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean())
        dlogits = p.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        gw2 = h.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dh = dlogits @ self.w2.T
        dh[h <= 0.0] = 0.0
        gw1 = x.T @ dh
        gb1 = dh.sum(axis=0)
        gx = dh @ self.w1.T
        return ce, (gw1, gb1, gw2, gb2), gx

    def update(self, grads):
        for par, opt, g in zip((self.w1, self.b1, self.w2, self.b2), self.opts, grads):
            par -= opt.step(g)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        _, p = self.forward(x)
        return float((p.argmax(axis=1) == y).mean())


def adv_in_training(split: EvalSplit, labels: AttributeLabels,
                    hp_train: TrainHyperparams, hp: UnlearnHyperparams,
                    adj: sp.csr_matrix | None = None,
                    kind: str = "mf", lgcn_layers: int = 3) -> UnlearnResult:
    """Joint training against an attribute classifier with gradient reversal.

    Per recommender batch the head takes `adv_inner_steps` updates on the full
    user table, then its input gradient is sign-reversed (scaled by
    retrain_trade_off) into the user embeddings.  With a zero trade-off and
    zero inner steps this is exactly plain training.
    """
    hp.validate()
    lam = hp.retrain_trade_off
    y = labels.labels
    t0 = time.perf_counter()
    model = init_model(kind, split.train.n_users, split.train.n_items, hp_train,
                       lgcn_layers=lgcn_layers)
    head = _AdversaryHead(hp_train.d, labels.n_classes, hp.adv_hidden,
                          hp.learning_rate, hp.seed)
    ce_last = [0.0]

    def batch_hook(m: EmbeddingModel):
        if hp.adv_inner_steps == 0 and lam == 0:
            return
        finals = _user_finals(m, adj)
        for _ in range(hp.adv_inner_steps):
            ce, grads, _ = head.loss_and_grads(finals, y)
            head.update(grads)
        ce, _, gx = head.loss_and_grads(finals, y)
        ce_last[0] = ce
        if lam > 0:
            # sign-reversed head gradient joins the recommender's SGD step
            m.user_emb += hp_train.learning_rate * lam * _finals_grad_to_table(gx, m, adj)

    acc_per_epoch: list[float] = []
    ce_per_epoch: list[float] = []

    def epoch_hook(m: EmbeddingModel):
        finals = _user_finals(m, adj)
        acc_per_epoch.append(head.accuracy(finals, y))
        ce_per_epoch.append(ce_last[0])

    hook = None if (hp.adv_inner_steps == 0 and lam == 0) else batch_hook
    trained, losses = train(model, split, hp_train, adj=adj,
                            batch_hook=hook, epoch_hook=epoch_hook)
    wall = time.perf_counter() - t0
    trace = [(e, ce_per_epoch[e], bpr) for e, bpr in enumerate(losses)]
    return UnlearnResult(model=trained, wall_time_seconds=wall, trace=trace,
                         extra={"adv_accuracy": acc_per_epoch})
