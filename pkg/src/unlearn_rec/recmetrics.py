"""Leave-one-out ranking metrics: HR@K and NDCG@K over 100-candidate lists.

Tie handling is pessimistic: the held-out positive ranks below every
candidate it is tied with, so untrained constant scorers don't look good.
NDCG uses the single-relevant-item normalization (ideal DCG = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataio import EvalSplit
from .errors import DataError
from .recmodels import EmbeddingModel, effective_embeddings


@dataclass
class RecReport:
    ndcg: dict[int, float]
    hr: dict[int, float]
    per_user_ranks: list[int]

    def flat(self) -> dict[str, float]:
        out = {}
        for k in sorted(self.ndcg):
            out[f"ndcg@{k}"] = self.ndcg[k]
        for k in sorted(self.hr):
            out[f"hr@{k}"] = self.hr[k]
        return out


def rank_from_scores(pos_score: float, neg_scores: np.ndarray) -> int:
    """1-based rank of the positive, ties resolved against it."""
    neg_scores = np.asarray(neg_scores)
    return int(1 + (neg_scores > pos_score).sum() + (neg_scores == pos_score).sum())


def rank_of_positive(model: EmbeddingModel, user: int, positive: int,
                     negatives: np.ndarray, adj: sp.csr_matrix | None = None) -> int:
    candidates = [positive, *np.asarray(negatives).tolist()]
    if len(set(candidates)) != len(candidates):
        raise DataError(f"duplicate candidates for user {user}")
    ue, ie = effective_embeddings(model, adj)
    scores = ie[np.asarray(candidates)] @ ue[user]
    return rank_from_scores(scores[0], scores[1:])


def ndcg_hr_at_k(ranks, k: int) -> tuple[float, float]:
    """Mean NDCG@k and HR@k over per-user ranks."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DataError("empty rank list")
    if k < 1:
        raise DataError(f"K must be >= 1, got {k}")
    hit = ranks <= k
    ndcg = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(ndcg.mean()), float(hit.mean())


def evaluate_model(model: EmbeddingModel, split: EvalSplit,
                   adj: sp.csr_matrix | None = None, ks=(5, 10)) -> RecReport:
    """Rank each user's held-out positive against its negatives; aggregate."""
    ue, ie = effective_embeddings(model, adj)
    ranks = []
    for u in sorted(split.test):
        pos, negs = split.test[u]
        pos_score = float(ie[pos] @ ue[u])
        neg_scores = ie[negs] @ ue[u]
        ranks.append(rank_from_scores(pos_score, neg_scores))
    ndcg = {}
    hr = {}
    for k in ks:
        ndcg[k], hr[k] = ndcg_hr_at_k(ranks, k)
    return RecReport(ndcg=ndcg, hr=hr, per_user_ranks=ranks)


def dcg_at_rank(rank: int) -> float:
    """Discount factor a single relevant item earns at the given rank."""
    return 1.0 / math.log2(rank + 1.0)
