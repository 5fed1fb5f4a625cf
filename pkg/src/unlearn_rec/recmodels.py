"""Embedding-based recommenders: BPR matrix factorization and LightGCN.

Both models are a pair of embedding tables scored by dot product; LightGCN
additionally smooths the tables over the symmetric-normalized user-item
graph before scoring.  Training is mini-batch SGD on the pairwise BPR
objective with uniformly sampled negatives, fully deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataio import EvalSplit, InteractionDataset
from .errors import ConfigError, DataError, NumericError

MODEL_KINDS = ("mf", "lightgcn")
CHECKPOINT_VERSION = 1


@dataclass
class TrainHyperparams:
    d: int = 64
    learning_rate: float = 0.03
    l2_weight: float = 1e-5
    epochs: int = 200
    batch_size: int = 2048
    neg_per_pos: int = 1
    seed: int = 0

    def validate(self):
        for name in ("d", "epochs", "batch_size", "neg_per_pos"):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.l2_weight < 0:
            raise ConfigError("learning_rate must be > 0 and l2_weight >= 0")


@dataclass
class EmbeddingModel:
    """User/item embedding tables; treat as immutable after construction."""

    kind: str
    user_emb: np.ndarray
    item_emb: np.ndarray
    lgcn_layers: int = 0

    @property
    def d(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "EmbeddingModel":
        return replace(self, user_emb=self.user_emb.copy(), item_emb=self.item_emb.copy())


def init_model(kind: str, n_users: int, n_items: int, hp: TrainHyperparams,
               lgcn_layers: int = 3) -> EmbeddingModel:
    """Fresh model with N(0, 0.1^2) embeddings from a PCG64 stream."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if n_users < 1 or n_items < 1:
        raise ConfigError("n_users and n_items must be >= 1")
    if hp.d < 1:
        raise ConfigError("embedding dimension d must be >= 1")
    if kind == "lightgcn" and lgcn_layers < 0:
        raise ConfigError("lgcn_layers must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 0]))
    user_emb = 0.1 * rng.standard_normal((n_users, hp.d))
    item_emb = 0.1 * rng.standard_normal((n_items, hp.d))
    return EmbeddingModel(kind=kind, user_emb=user_emb, item_emb=item_emb,
                          lgcn_layers=lgcn_layers if kind == "lightgcn" else 0)


def build_norm_adjacency(ds: InteractionDataset) -> sp.csr_matrix:
    """Symmetric normalization D^-1/2 A D^-1/2 of the bipartite interaction graph.

    Duplicate (user, item) records collapse to one edge; degrees count
    distinct neighbors.
    """
    pairs = np.unique(np.stack([ds.user_idx, ds.item_idx], axis=1), axis=0)
    u, i = pairs[:, 0], pairs[:, 1]
    deg_u = np.bincount(u, minlength=ds.n_users)
    deg_i = np.bincount(i, minlength=ds.n_items)
    if (deg_u == 0).any() or (deg_i == 0).any():
        raise DataError("zero-degree node; filter the dataset before building the graph")
    vals = 1.0 / np.sqrt(deg_u[u] * deg_i[i])
    n = ds.n_users + ds.n_items
    rows = np.concatenate([u, ds.n_users + i])
    cols = np.concatenate([ds.n_users + i, u])
    adj = sp.csr_matrix((np.concatenate([vals, vals]), (rows, cols)), shape=(n, n))
    return adj


def lightgcn_propagate(model: EmbeddingModel, adj: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Mean of embeddings over propagation layers 0..L, split back user/item."""
    if model.kind != "lightgcn":
        raise ConfigError(f"propagation applies to lightgcn models, not {model.kind!r}")
    e = np.vstack([model.user_emb, model.item_emb])
    total = e.copy()
    for _ in range(model.lgcn_layers):
        e = adj @ e
        if not np.isfinite(e).all():
            raise NumericError("non-finite values during graph propagation")
        total += e
    final = total / (model.lgcn_layers + 1)
    return final[: model.n_users], final[model.n_users:]


def propagate_back(grad: np.ndarray, adj: sp.csr_matrix, n_layers: int) -> np.ndarray:
    """Pull a gradient on the propagated output back onto the layer-0 tables.

    The forward map is linear and adj is symmetric, so the adjoint is the
    same averaged power sum applied to the gradient.
    """
    acc = grad
    total = grad.copy()
    for _ in range(n_layers):
        acc = adj @ acc
        total += acc
    return total / (n_layers + 1)


def effective_embeddings(model: EmbeddingModel, adj: sp.csr_matrix | None = None):
    """The tables scoring actually uses: propagated finals for lightgcn."""
    if model.kind == "mf":
        return model.user_emb, model.item_emb
    if adj is None:
        raise ConfigError("lightgcn scoring needs the normalized adjacency")
    return lightgcn_propagate(model, adj)


def score(model: EmbeddingModel, user_idx: int, item_idx: int,
          adj: sp.csr_matrix | None = None) -> float:
    """Dot-product score; recomputes propagation per call for lightgcn."""
    ue, ie = effective_embeddings(model, adj)
    return float(ue[user_idx] @ ie[item_idx])


def bpr_loss_and_grads(user_vecs: np.ndarray, pos_vecs: np.ndarray,
                       neg_vecs: np.ndarray, l2_weight: float):
    """Summed BPR loss over (u, i, j) rows plus per-row gradients.

    loss = sum(-log sigmoid(u.(i - j)) + l2 * (|u|^2 + |i|^2 + |j|^2))
    """
    x = np.einsum("ij,ij->i", user_vecs, pos_vecs) - np.einsum("ij,ij->i", user_vecs, neg_vecs)
    # -log sigmoid(x) = log(1 + exp(-x)), stable form
    loss = np.logaddexp(0.0, -x).sum()
    loss += l2_weight * ((user_vecs ** 2).sum() + (pos_vecs ** 2).sum() + (neg_vecs ** 2).sum())
    c = (-1.0 / (1.0 + np.exp(x)))[:, None]  # d/dx of -log sigmoid(x) = sigmoid(x) - 1
    gu = c * (pos_vecs - neg_vecs) + 2.0 * l2_weight * user_vecs
    gi = c * user_vecs + 2.0 * l2_weight * pos_vecs
    gj = -c * user_vecs + 2.0 * l2_weight * neg_vecs
    return float(loss), gu, gi, gj


def scatter_add(table: np.ndarray, idx: np.ndarray, grads: np.ndarray):
    """table[idx] += grads with duplicate indices accumulated."""
    n, d = table.shape
    flat = np.bincount((idx[:, None] * d + np.arange(d)).ravel(),
                       weights=grads.ravel(), minlength=n * d)
    table += flat.reshape(n, d)


class _NegativeSampler:
    """Uniform negatives excluding each user's training positives."""

    def __init__(self, train: InteractionDataset):
        self.n_items = train.n_items
        # dense mask is fine at the scales this package targets (<= ML-1M)
        self.mask = np.zeros((train.n_users, train.n_items), dtype=bool)
        self.mask[train.user_idx, train.item_idx] = True

    def sample(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        j = rng.integers(0, self.n_items, size=len(users))
        bad = self.mask[users, j]
        while bad.any():
            j[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
            bad = self.mask[users, j]
        return j


def train(model: EmbeddingModel, split: EvalSplit, hp: TrainHyperparams,
          adj: sp.csr_matrix | None = None,
          batch_hook=None, epoch_hook=None) -> tuple[EmbeddingModel, list[float]]:
    """Mini-batch SGD on BPR; returns the trained model and per-epoch mean loss.

    Updates use the summed batch gradient scaled by the learning rate, so the
    step size matches classic per-sample BPR SGD.  `batch_hook(model)` runs
    after every batch update and `epoch_hook(model)` after every epoch (used
    by the in-training unlearning baselines).
    """
    hp.validate()
    tr = split.train
    if tr.n_interactions == 0:
        raise DataError("empty training split")
    if model.kind == "lightgcn" and adj is None:
        raise ConfigError("training a lightgcn model needs the normalized adjacency")
    model = model.copy()
    ue, ie = model.user_emb, model.item_emb
    sampler = _NegativeSampler(tr)
    rng = np.random.default_rng(np.random.SeedSequence([hp.seed, 1]))
    losses: list[float] = []
    n = tr.n_interactions
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            batch = perm[start: start + hp.batch_size]
            u = tr.user_idx[batch]
            i = tr.item_idx[batch]
            if hp.neg_per_pos > 1:
                u = np.repeat(u, hp.neg_per_pos)
                i = np.repeat(i, hp.neg_per_pos)
            j = sampler.sample(u, rng)

            if model.kind == "mf":
                loss, gu, gi, gj = bpr_loss_and_grads(ue[u], ie[i], ie[j], hp.l2_weight)
                scatter_add(ue, u, -hp.learning_rate * gu)
                scatter_add(ie, i, -hp.learning_rate * gi)
                scatter_add(ie, j, -hp.learning_rate * gj)
            else:
                fu, fi = lightgcn_propagate(model, adj)
                loss, gu, gi, gj = bpr_loss_and_grads(fu[u], fi[i], fi[j], 0.0)
                # L2 acts on the layer-0 (ego) embeddings, as in standard LightGCN
                loss += hp.l2_weight * ((ue[u] ** 2).sum() + (ie[i] ** 2).sum()
                                        + (ie[j] ** 2).sum())
                g = np.zeros((model.n_users + model.n_items, model.d))
                scatter_add(g[: model.n_users], u, gu)
                scatter_add(g[model.n_users:], i, gi)
                scatter_add(g[model.n_users:], j, gj)
                g0 = propagate_back(g, adj, model.lgcn_layers)
                scatter_add(g0[: model.n_users], u, 2.0 * hp.l2_weight * ue[u])
                scatter_add(g0[model.n_users:], i, 2.0 * hp.l2_weight * ie[i])
                scatter_add(g0[model.n_users:], j, 2.0 * hp.l2_weight * ie[j])
                ue -= hp.learning_rate * g0[: model.n_users]
                ie -= hp.learning_rate * g0[model.n_users:]

            epoch_loss += loss
            if batch_hook is not None:
                batch_hook(model)
        mean_loss = epoch_loss / (n * hp.neg_per_pos)
        if not np.isfinite(mean_loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        losses.append(mean_loss)
        if epoch_hook is not None:
            epoch_hook(model)
    return model, losses


# ---------------------------------------------------------------------------
# checkpoints: JSON header + raw little-endian float32 blocks

def save_model(model: EmbeddingModel, out_dir, seed: int | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "d": model.d,
        "lgcn_layers": model.lgcn_layers,
        "n_users": model.n_users,
        "n_items": model.n_items,
        "seed": seed,
    }
    with open(out_dir / "model.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    model.user_emb.astype("<f4").tofile(out_dir / "user_emb.f32")
    model.item_emb.astype("<f4").tofile(out_dir / "item_emb.f32")
    return out_dir


def load_model(in_dir) -> EmbeddingModel:
    """Load a checkpoint; tables come back as float64 (quantized to float32)."""
    in_dir = Path(in_dir)
    header_path = in_dir / "model.json"
    if not header_path.exists():
        raise DataError(f"{in_dir}: no model.json (not a checkpoint)")
    with open(header_path, encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"{in_dir}: checkpoint version mismatch")
    n_users, n_items, d = header["n_users"], header["n_items"], header["d"]

    def read_block(name, rows):
        arr = np.fromfile(in_dir / name, dtype="<f4")
        if arr.size != rows * d:
            raise DataError(f"{in_dir}/{name}: expected {rows * d} floats, got {arr.size}")
        return arr.reshape(rows, d).astype(np.float64)

    return EmbeddingModel(kind=header["kind"],
                          user_emb=read_block("user_emb.f32", n_users),
                          item_emb=read_block("item_emb.f32", n_items),
                          lgcn_layers=header["lgcn_layers"])
