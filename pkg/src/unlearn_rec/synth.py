"""Synthetic implicit-feedback data with a planted, attribute-correlated taste.

Users and items get low-rank latent factors; each user's interactions are
drawn without replacement from a softmax over item affinities plus a
popularity bias.  The attribute shifts user factors along a fixed direction,
so trained embeddings leak it to attackers at a controllable strength.
Useful for demos and for exercising the full pipeline where the MovieLens
files are not available.
"""

from __future__ import annotations

import numpy as np

from .dataio import RawInteraction
from .errors import ConfigError


def generate_synthetic_interactions(
    n_users: int = 943,
    n_items: int = 1682,
    mean_interactions: float = 75.0,
    min_interactions: int = 20,
    latent_dim: int = 12,
    taste_scale: float = 3.0,
    attr_shift: float = 1.4,
    pop_scale: float = 1.5,
    class_balance: float = 0.29,
    class_names: tuple[str, str] = ("M", "F"),
    seed: int = 0,
) -> tuple[list[RawInteraction], dict[str, str]]:
    """Return raw interactions plus a user_id -> class_name mapping.

    `attr_shift` controls how strongly the attribute displaces user factors
    (0 plants no attribute signal); `taste_scale` controls how concentrated
    each user's item choices are (0 is uniform popularity sampling).
    """
    if n_users < 2 or n_items < 2:
        raise ConfigError("need at least 2 users and 2 items")
    if not 0.0 < class_balance < 1.0:
        raise ConfigError("class_balance must be in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))

    attr = (rng.random(n_users) < class_balance).astype(np.int64)
    shift_dir = rng.standard_normal(latent_dim)
    shift_dir /= np.linalg.norm(shift_dir)
    user_f = rng.standard_normal((n_users, latent_dim))
    user_f += np.where(attr[:, None] == 1, 0.5, -0.5) * attr_shift * shift_dir
    item_f = rng.standard_normal((n_items, latent_dim))
    popularity = pop_scale * rng.standard_normal(n_items)

    sigma = max(np.log(mean_interactions) * 0.12, 0.05)
    counts = rng.lognormal(mean=np.log(mean_interactions), sigma=sigma, size=n_users)
    counts = np.clip(np.round(counts), min_interactions, n_items - 110).astype(np.int64)

    interactions: list[RawInteraction] = []
    t_base = 880_000_000
    for u in range(n_users):
        logits = taste_scale * (item_f @ user_f[u]) / np.sqrt(latent_dim) + popularity
        logits -= logits.max()
        p = np.exp(logits)
        p /= p.sum()
        items = rng.choice(n_items, size=int(counts[u]), replace=False, p=p)
        times = t_base + rng.choice(10_000_000, size=len(items), replace=False)
        ratings = rng.integers(1, 6, size=len(items))
        for it, ts, r in zip(items.tolist(), times.tolist(), ratings.tolist()):
            interactions.append(RawInteraction(f"u{u}", f"i{it}", float(r), int(ts)))

    attrs = {f"u{u}": class_names[attr[u]] for u in range(n_users)}
    return interactions, attrs


def write_raw_files(interactions, attrs, ratings_path, attr_path):
    """Write generic_tsv rating and tsv attribute files for the CLI pipeline."""
    with open(ratings_path, "w", encoding="utf-8", newline="\n") as fh:
        for r in interactions:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.rating!r}\t{r.timestamp}\n")
    with open(attr_path, "w", encoding="utf-8", newline="\n") as fh:
        for uid in sorted(attrs, key=lambda s: int(s[1:])):
            fh.write(f"{uid}\t{attrs[uid]}\n")
