import numpy as np
import pytest

from unlearn_rec.dataio import (AttributeLabels, EvalSplit, InteractionDataset,
                                RawInteraction)


def make_dataset(entries, n_users=None, n_items=None):
    """Build an InteractionDataset from (user_idx, item_idx, rating, ts) tuples."""
    u = [e[0] for e in entries]
    i = [e[1] for e in entries]
    r = [e[2] if len(e) > 2 else 1.0 for e in entries]
    t = [e[3] if len(e) > 3 else k for k, e in enumerate(entries)]
    nu = n_users if n_users is not None else max(u) + 1
    ni = n_items if n_items is not None else max(i) + 1
    return InteractionDataset.from_arrays(
        n_users=nu, n_items=ni, user_idx=u, item_idx=i, rating=r, timestamp=t,
        user_ids=[f"u{k}" for k in range(nu)], item_ids=[f"i{k}" for k in range(ni)])


def make_labels(label_list, class_names=("a", "b")):
    return AttributeLabels(labels=np.asarray(label_list, dtype=np.int64),
                           class_names=tuple(class_names))


def make_split(train_entries, test, n_users=None, n_items=None, n_neg=None, seed=0):
    """EvalSplit from explicit train tuples and {user: (pos, negs)} test dict."""
    ds = make_dataset(train_entries, n_users=n_users, n_items=n_items)
    test = {u: (p, np.asarray(negs, dtype=np.int64)) for u, (p, negs) in test.items()}
    if n_neg is None:
        n_neg = len(next(iter(test.values()))[1])
    return EvalSplit(train=ds, test=test, n_neg=n_neg, seed=seed)


def random_interactions(rng, n_users, n_items, density=0.2, dup_free=True):
    """Random RawInteraction list; every user gets >= 2 distinct items."""
    out = []
    for u in range(n_users):
        k = max(2, rng.binomial(n_items, density))
        items = rng.choice(n_items, size=min(k, n_items), replace=False)
        times = rng.choice(10_000, size=len(items), replace=False)
        for it, ts in zip(items.tolist(), times.tolist()):
            out.append(RawInteraction(f"u{u}", f"i{it}", float(rng.integers(1, 6)), int(ts)))
    if not dup_free:
        out.append(out[0])
    return out


def finite_difference(fn, table, step=1e-4, entries=None):
    """Central finite differences of scalar fn(table) w.r.t. selected entries."""
    grads = {}
    if entries is None:
        entries = [(r, c) for r in range(table.shape[0]) for c in range(table.shape[1])]
    for r, c in entries:
        orig = table[r, c]
        table[r, c] = orig + step
        up = fn(table)
        table[r, c] = orig - step
        down = fn(table)
        table[r, c] = orig
        grads[(r, c)] = (up - down) / (2.0 * step)
    return grads


def assert_grad_close(analytic, numeric_map, rel_tol=1e-3):
    for (r, c), num in numeric_map.items():
        ana = analytic[r, c]
        denom = max(abs(num), abs(ana), 1e-8)
        assert abs(ana - num) / denom <= rel_tol, (
            f"gradient mismatch at ({r},{c}): analytic {ana}, numeric {num}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
