"""Dataset ingestion: parsing, filtering, leave-one-out splitting, attributes.

Raw rating files are parsed into (user, item, rating, timestamp) records,
iteratively filtered to a minimum-interaction fixed point, remapped to dense
0-based indices, and split per user into one held-out test positive plus
uniformly sampled negatives.  Everything derived is persisted as plain TSV
plus a small JSON header so splits round-trip bit-exactly across machines.

Negative sampling uses one PCG64 stream per user, seeded from
(seed, user_idx), so per-user results do not depend on iteration order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError

FORMAT_VERSION = 1

RAW_FORMATS = ("ml100k", "ml1m", "generic_tsv")
ATTR_FORMATS = ("tsv", "ml100k_user", "ml1m_user")


class RawInteraction(NamedTuple):
    user_id: str
    item_id: str
    rating: float
    timestamp: int


@dataclass
class InteractionDataset:
    """Interactions with dense 0-based indices plus the ID remapping.

    Treat instances as immutable after construction.  `pos_sets` mirrors the
    interaction arrays exactly (duplicates collapse into the set).
    """

    n_users: int
    n_items: int
    user_idx: np.ndarray
    item_idx: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    pos_sets: dict[int, set[int]] = field(repr=False)

    @classmethod
    def from_arrays(cls, n_users, n_items, user_idx, item_idx, rating,
                    timestamp, user_ids, item_ids):
        user_idx = np.asarray(user_idx, dtype=np.int64)
        item_idx = np.asarray(item_idx, dtype=np.int64)
        rating = np.asarray(rating, dtype=np.float64)
        timestamp = np.asarray(timestamp, dtype=np.int64)
        pos_sets: dict[int, set[int]] = {u: set() for u in range(n_users)}
        for u, i in zip(user_idx.tolist(), item_idx.tolist()):
            pos_sets[u].add(i)
        return cls(n_users, n_items, user_idx, item_idx, rating, timestamp,
                   tuple(user_ids), tuple(item_ids), pos_sets)

    @property
    def n_interactions(self) -> int:
        return len(self.user_idx)

    def user_degree(self) -> np.ndarray:
        return np.bincount(self.user_idx, minlength=self.n_users)

    def item_degree(self) -> np.ndarray:
        return np.bincount(self.item_idx, minlength=self.n_items)


@dataclass
class EvalSplit:
    """Leave-one-out split: train interactions plus per-user test candidates.

    `test` maps user_idx -> (positive_item_idx, negatives array).
    """

    train: InteractionDataset
    test: dict[int, tuple[int, np.ndarray]]
    n_neg: int
    seed: int


@dataclass
class AttributeLabels:
    """Dense per-user class indices; class_names[k] names class k."""

    labels: np.ndarray
    class_names: tuple[str, ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


def parse_raw(path, fmt: str) -> list[RawInteraction]:
    """Parse a raw rating file into RawInteraction records, order preserved.

    ml100k lines are tab-separated, ml1m uses '::', generic_tsv is
    tab-separated; all carry user, item, rating, timestamp.
    """
    if fmt not in RAW_FORMATS:
        raise ConfigError(f"unknown raw format {fmt!r}; expected one of {RAW_FORMATS}")
    sep = "::" if fmt == "ml1m" else "\t"
    path = Path(path)
    if not path.exists():
        raise DataError(f"rating file not found: {path}")
    out: list[RawInteraction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 fields separated by {sep!r}, "
                    f"got {len(parts)}")
            uid, iid, rating_s, ts_s = parts
            try:
                rating = float(rating_s)
                ts = int(ts_s)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not np.isfinite(rating):
                raise DataError(f"{path}:{lineno}: non-finite rating")
            if ts < 0:
                raise DataError(f"{path}:{lineno}: negative timestamp")
            out.append(RawInteraction(uid, iid, rating, ts))
    if not out:
        raise DataError(f"{path}: empty dataset")
    return out


def filter_min_interactions(raw: list[RawInteraction], threshold: int) -> InteractionDataset:
    """Iteratively drop users/items with < threshold interactions, to a fixed point.

    Surviving IDs are remapped densely in order of first appearance in the
    (filtered) record list.  Duplicate (user, item) records are kept.
    """
    if threshold < 1:
        raise ConfigError(f"threshold must be >= 1, got {threshold}")
    if not raw:
        raise DataError("empty dataset")
    records = list(raw)
    while True:
        ucnt: dict[str, int] = {}
        icnt: dict[str, int] = {}
        for r in records:
            ucnt[r.user_id] = ucnt.get(r.user_id, 0) + 1
            icnt[r.item_id] = icnt.get(r.item_id, 0) + 1
        bad_u = {u for u, c in ucnt.items() if c < threshold}
        bad_i = {i for i, c in icnt.items() if c < threshold}
        if not bad_u and not bad_i:
            break
        records = [r for r in records
                   if r.user_id not in bad_u and r.item_id not in bad_i]
        if not records:
            raise DataError(
                f"all interactions removed at threshold {threshold} (empty fixed point)")

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    for r in records:
        if r.user_id not in user_map:
            user_map[r.user_id] = len(user_map)
        if r.item_id not in item_map:
            item_map[r.item_id] = len(item_map)
    return InteractionDataset.from_arrays(
        n_users=len(user_map),
        n_items=len(item_map),
        user_idx=[user_map[r.user_id] for r in records],
        item_idx=[item_map[r.item_id] for r in records],
        rating=[r.rating for r in records],
        timestamp=[r.timestamp for r in records],
        user_ids=list(user_map),
        item_ids=list(item_map),
    )


def _negative_rng(seed: int, user: int) -> np.random.Generator:
    # one independent PCG64 stream per user, order-independent
    return np.random.default_rng(np.random.SeedSequence([seed, user]))


def leave_one_out_split(ds: InteractionDataset, n_neg: int = 99, seed: int = 0) -> EvalSplit:
    """Hold out each user's most recent interaction; sample distinct negatives.

    Timestamp ties break toward the larger item index.  Negatives are drawn
    uniformly without replacement from items the user never interacted with.
    """
    if n_neg < 1:
        raise ConfigError(f"n_neg must be >= 1, got {n_neg}")
    order = np.arange(ds.n_interactions)
    keep = np.ones(ds.n_interactions, dtype=bool)
    test: dict[int, tuple[int, np.ndarray]] = {}
    rows_by_user: dict[int, list[int]] = {u: [] for u in range(ds.n_users)}
    for row, u in enumerate(ds.user_idx.tolist()):
        rows_by_user[u].append(row)

    all_items = np.arange(ds.n_items)
    for u in range(ds.n_users):
        rows = rows_by_user[u]
        if len(rows) < 2:
            raise DataError(
                f"user {ds.user_ids[u]!r} (idx {u}) has {len(rows)} interaction(s); "
                "need >= 2 for leave-one-out")
        # most recent; ties -> larger item_idx
        best = max(rows, key=lambda r: (ds.timestamp[r], ds.item_idx[r]))
        keep[best] = False
        pos_item = int(ds.item_idx[best])
        interacted = np.fromiter(ds.pos_sets[u], count=len(ds.pos_sets[u]), dtype=np.int64)
        candidates = np.setdiff1d(all_items, interacted, assume_unique=False)
        if len(candidates) < n_neg:
            raise DataError(
                f"user idx {u}: only {len(candidates)} non-interacted items, "
                f"cannot sample {n_neg} negatives")
        rng = _negative_rng(seed, u)
        negs = np.sort(rng.choice(candidates, size=n_neg, replace=False))
        test[u] = (pos_item, negs)

    train = InteractionDataset.from_arrays(
        n_users=ds.n_users,
        n_items=ds.n_items,
        user_idx=ds.user_idx[keep],
        item_idx=ds.item_idx[keep],
        rating=ds.rating[keep],
        timestamp=ds.timestamp[keep],
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
    )
    del order
    return EvalSplit(train=train, test=test, n_neg=n_neg, seed=seed)


def _iter_attr_lines(path: Path, fmt: str):
    """Yield (lineno, user_id, class_string) from a raw attribute file."""
    if fmt == "tsv":
        sep, uid_field, cls_field, min_fields = "\t", 0, 1, 2
    elif fmt == "ml100k_user":
        # id|age|gender|occupation|zip
        sep, uid_field, cls_field, min_fields = "|", 0, 2, 5
    elif fmt == "ml1m_user":
        # id::gender::age::occupation::zip
        sep, uid_field, cls_field, min_fields = "::", 0, 1, 5
    else:
        raise ConfigError(f"unknown attribute format {fmt!r}; expected one of {ATTR_FORMATS}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) < min_fields:
                raise DataError(f"{path}:{lineno}: expected >= {min_fields} fields")
            yield lineno, parts[uid_field], parts[cls_field]


def load_attributes(path, user_ids: tuple[str, ...], fmt: str = "tsv") -> AttributeLabels:
    """Load one categorical label per (remapped) user.

    Class indices follow first appearance in file order.  Missing users,
    conflicting duplicates, and < 2 classes are errors.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"attribute file not found: {path}")
    user_map = {uid: idx for idx, uid in enumerate(user_ids)}
    class_names: list[str] = []
    class_of: dict[str, int] = {}
    seen: dict[int, tuple[int, str]] = {}
    labels = np.full(len(user_ids), -1, dtype=np.int64)
    for lineno, uid, cls in _iter_attr_lines(path, fmt):
        if cls not in class_of:
            class_of[cls] = len(class_names)
            class_names.append(cls)
        u = user_map.get(uid)
        if u is None:
            continue  # raw files may cover users dropped by filtering
        if u in seen and seen[u][1] != cls:
            raise DataError(
                f"{path}:{lineno}: conflicting labels for user {uid!r} "
                f"({seen[u][1]!r} at line {seen[u][0]} vs {cls!r})")
        seen[u] = (lineno, cls)
        labels[u] = class_of[cls]
    missing = [user_ids[u] for u in range(len(user_ids)) if labels[u] < 0]
    if missing:
        raise DataError(
            f"{path}: {len(missing)} user(s) missing attribute labels: "
            f"{missing[:10]}{'...' if len(missing) > 10 else ''}")
    present = sorted(set(labels.tolist()))
    if len(present) < 2:
        raise DataError(f"{path}: need >= 2 attribute classes, found {len(present)}")
    return AttributeLabels(labels=labels, class_names=tuple(class_names))


# ---------------------------------------------------------------------------
# persistence: TSV files + meta.json header

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_lines(path: Path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def save_split(split: EvalSplit, out_dir, labels: AttributeLabels | None = None) -> Path:
    """Persist a split (and optional attribute labels) as TSV + meta.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = split.train

    _write_lines(out_dir / "train_ratings.tsv",
                 (f"{u}\t{i}\t{r!r}\t{t}"
                  for u, i, r, t in zip(ds.user_idx.tolist(), ds.item_idx.tolist(),
                                        ds.rating.tolist(), ds.timestamp.tolist())))
    _write_lines(out_dir / "test_negatives.tsv",
                 (f"{u}\t{split.test[u][0]}\t" + "\t".join(map(str, split.test[u][1].tolist()))
                  for u in sorted(split.test)))
    _write_lines(out_dir / "id_map_users.tsv",
                 (f"{idx}\t{uid}" for idx, uid in enumerate(ds.user_ids)))
    _write_lines(out_dir / "id_map_items.tsv",
                 (f"{idx}\t{iid}" for idx, iid in enumerate(ds.item_ids)))
    files = ["train_ratings.tsv", "test_negatives.tsv",
             "id_map_users.tsv", "id_map_items.tsv"]
    meta = {
        "format_version": FORMAT_VERSION,
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "n_neg": split.n_neg,
        "seed": split.seed,
    }
    if labels is not None:
        _write_lines(out_dir / "user_attr.tsv",
                     (f"{u}\t{int(labels.labels[u])}" for u in range(ds.n_users)))
        files.append("user_attr.tsv")
        meta["class_names"] = list(labels.class_names)
    meta["checksums"] = {name: _sha256(out_dir / name) for name in files}
    with open(out_dir / "meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def _verify(meta: dict, in_dir: Path):
    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{in_dir}: format version mismatch "
            f"(file {meta.get('format_version')!r}, tool {FORMAT_VERSION})")
    for name, digest in meta.get("checksums", {}).items():
        fpath = in_dir / name
        if not fpath.exists():
            raise DataError(f"{in_dir}: missing file {name}")
        actual = _sha256(fpath)
        if actual != digest:
            raise DataError(f"{in_dir}/{name}: checksum mismatch (corrupt or truncated)")


def load_split(in_dir) -> tuple[EvalSplit, AttributeLabels | None]:
    """Load a split saved by save_split, verifying version and checksums."""
    in_dir = Path(in_dir)
    meta_path = in_dir / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{in_dir}: no meta.json (not a saved split)")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    _verify(meta, in_dir)
    n_users, n_items = meta["n_users"], meta["n_items"]

    def read_rows(name, n_fields):
        rows = []
        with open(in_dir / name, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split("\t")
                if n_fields is not None and len(parts) != n_fields:
                    raise DataError(f"{in_dir}/{name}:{lineno}: expected {n_fields} fields")
                rows.append(parts)
        return rows

    id_users = [p[1] for p in read_rows("id_map_users.tsv", 2)]
    id_items = [p[1] for p in read_rows("id_map_items.tsv", 2)]
    tr = read_rows("train_ratings.tsv", 4)
    train = InteractionDataset.from_arrays(
        n_users=n_users, n_items=n_items,
        user_idx=[int(p[0]) for p in tr],
        item_idx=[int(p[1]) for p in tr],
        rating=[float(p[2]) for p in tr],
        timestamp=[int(p[3]) for p in tr],
        user_ids=id_users, item_ids=id_items,
    )
    test: dict[int, tuple[int, np.ndarray]] = {}
    for parts in read_rows("test_negatives.tsv", None):
        u = int(parts[0])
        test[u] = (int(parts[1]), np.array([int(x) for x in parts[2:]], dtype=np.int64))
    split = EvalSplit(train=train, test=test, n_neg=meta["n_neg"], seed=meta["seed"])

    labels = None
    if "class_names" in meta:
        rows = read_rows("user_attr.tsv", 2)
        arr = np.full(n_users, -1, dtype=np.int64)
        for p in rows:
            arr[int(p[0])] = int(p[1])
        if (arr < 0).any():
            raise DataError(f"{in_dir}/user_attr.tsv: not every user labeled")
        labels = AttributeLabels(labels=arr, class_names=tuple(meta["class_names"]))
    return split, labels
