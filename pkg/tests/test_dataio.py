import numpy as np
import pytest

from unlearn_rec.dataio import (RawInteraction, filter_min_interactions,
                                leave_one_out_split, load_attributes,
                                load_split, parse_raw, save_split)
from unlearn_rec.errors import ConfigError, DataError

from conftest import make_dataset, random_interactions


def brute_force_filter(records, threshold):
    """Independent fixed-point removal oracle over raw records."""
    recs = list(records)
    while True:
        ucnt, icnt = {}, {}
        for r in recs:
            ucnt[r.user_id] = ucnt.get(r.user_id, 0) + 1
            icnt[r.item_id] = icnt.get(r.item_id, 0) + 1
        keep = [r for r in recs
                if ucnt[r.user_id] >= threshold and icnt[r.item_id] >= threshold]
        if len(keep) == len(recs):
            return recs
        recs = keep


# ---------------------------------------------------------------------------
# parse_raw

def test_parse_ml100k_line(tmp_path):
    f = tmp_path / "u.data"
    f.write_text("196\t242\t3\t881250949\n")
    (rec,) = parse_raw(f, "ml100k")
    assert rec == RawInteraction("196", "242", 3.0, 881250949)


def test_parse_ml1m_line(tmp_path):
    f = tmp_path / "ratings.dat"
    f.write_text("1::1193::5::978300760\n")
    (rec,) = parse_raw(f, "ml1m")
    assert rec == RawInteraction("1", "1193", 5.0, 978300760)


def test_parse_empty_file_errors(tmp_path):
    f = tmp_path / "empty.tsv"
    f.write_text("")
    with pytest.raises(DataError, match="empty"):
        parse_raw(f, "generic_tsv")


def test_parse_short_line_errors_with_line_number(tmp_path):
    f = tmp_path / "bad.tsv"
    f.write_text("a\tb\t1.0\t10\na\tb\t1.0\n")
    with pytest.raises(DataError, match=":2"):
        parse_raw(f, "generic_tsv")


def test_parse_unknown_format():
    with pytest.raises(ConfigError):
        parse_raw("whatever", "csv")


def test_parse_order_preserved(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("u2\ti1\t1\t5\nu1\ti1\t2\t3\n")
    recs = parse_raw(f, "generic_tsv")
    assert [r.user_id for r in recs] == ["u2", "u1"]


# ---------------------------------------------------------------------------
# filter_min_interactions

def _toy_counts_552():
    # users A,B with 5 interactions, C with 2; after dropping C both items keep 5
    recs = []
    for uid, items in (("A", "xyxyx"), ("B", "xxyyy"), ("C", "xy")):
        for k, it in enumerate(items):
            recs.append(RawInteraction(uid, it, 1.0, k))
    return recs


def test_filter_fixed_point_toy():
    recs = _toy_counts_552()
    expected = brute_force_filter(recs, 5)
    ds = filter_min_interactions(recs, 5)
    assert ds.n_users == 2
    assert ds.n_interactions == len(expected) == 10
    assert set(ds.user_ids) == {"A", "B"}


def test_filter_threshold_one_keeps_everything(rng):
    recs = random_interactions(rng, 6, 10)
    ds = filter_min_interactions(recs, 1)
    assert ds.n_interactions == len(recs)
    # identical up to remapping
    back = [(ds.user_ids[u], ds.item_ids[i], r, t)
            for u, i, r, t in zip(ds.user_idx, ds.item_idx, ds.rating, ds.timestamp)]
    assert back == [tuple(r) for r in recs]


def test_filter_everything_below_threshold_errors():
    recs = [RawInteraction("a", "x", 1.0, 0), RawInteraction("b", "y", 1.0, 1)]
    with pytest.raises(DataError, match="empty"):
        filter_min_interactions(recs, 5)


def test_filter_bad_threshold():
    with pytest.raises(ConfigError):
        filter_min_interactions(_toy_counts_552(), 0)


def test_filter_matches_oracle_and_degrees(rng):
    for trial in range(5):
        recs = random_interactions(rng, 8, 12, density=rng.uniform(0.15, 0.5))
        threshold = int(rng.integers(2, 4))
        expected = brute_force_filter(recs, threshold)
        if not expected:
            with pytest.raises(DataError):
                filter_min_interactions(recs, threshold)
            continue
        ds = filter_min_interactions(recs, threshold)
        assert ds.n_interactions == len(expected)
        # fixed point by recount
        assert ds.user_degree().min() >= threshold
        assert ds.item_degree().min() >= threshold


def test_filter_remap_is_bijection(rng):
    recs = random_interactions(rng, 7, 9)
    ds = filter_min_interactions(recs, 2)
    assert len(set(ds.user_ids)) == len(ds.user_ids) == ds.n_users
    assert len(set(ds.item_ids)) == len(ds.item_ids) == ds.n_items
    assert ds.user_idx.max() < ds.n_users and ds.item_idx.max() < ds.n_items


def test_pos_sets_mirror_interactions(rng):
    recs = random_interactions(rng, 5, 8)
    ds = filter_min_interactions(recs, 1)
    rebuilt = {u: set() for u in range(ds.n_users)}
    for u, i in zip(ds.user_idx.tolist(), ds.item_idx.tolist()):
        rebuilt[u].add(i)
    assert rebuilt == ds.pos_sets


# ---------------------------------------------------------------------------
# leave_one_out_split

def test_split_holds_out_most_recent():
    ds = make_dataset([(0, 0, 1.0, 10), (0, 1, 1.0, 20), (0, 2, 1.0, 30)], n_items=110)
    split = leave_one_out_split(ds, n_neg=5, seed=0)
    pos, negs = split.test[0]
    assert pos == 2
    assert set(split.train.item_idx[split.train.user_idx == 0]) == {0, 1}


def test_split_tie_breaks_to_larger_item():
    ds = make_dataset([(0, 3, 1.0, 7), (0, 5, 1.0, 7), (0, 1, 1.0, 3)], n_items=110)
    split = leave_one_out_split(ds, n_neg=5, seed=0)
    assert split.test[0][0] == 5


def test_split_default_gives_100_candidates():
    rng = np.random.default_rng(0)
    entries = []
    for u in range(4):
        for i in rng.choice(150, size=8, replace=False).tolist():
            entries.append((u, i, 1.0, int(rng.integers(10_000))))
    ds = make_dataset(entries, n_items=150)
    split = leave_one_out_split(ds, n_neg=99, seed=1)
    for u, (pos, negs) in split.test.items():
        assert 1 + len(negs) == 100


def test_split_negative_purity(rng):
    recs = random_interactions(rng, 6, 60, density=0.2)
    ds = filter_min_interactions(recs, 1)
    split = leave_one_out_split(ds, n_neg=20, seed=3)
    for u, (pos, negs) in split.test.items():
        all_pos = ds.pos_sets[u]
        assert len(negs) == 20
        assert len(set(negs.tolist())) == 20
        assert not set(negs.tolist()) & all_pos


def test_split_partitions_positives(rng):
    recs = random_interactions(rng, 6, 60, density=0.2)
    ds = filter_min_interactions(recs, 1)
    split = leave_one_out_split(ds, n_neg=10, seed=3)
    for u, (pos, _) in split.test.items():
        train_pos = set(split.train.item_idx[split.train.user_idx == u].tolist())
        assert pos not in train_pos
        assert train_pos | {pos} == ds.pos_sets[u]


def test_split_user_with_one_interaction_errors():
    ds = make_dataset([(0, 0, 1.0, 1), (1, 0, 1.0, 1), (1, 1, 1.0, 2)], n_items=30)
    with pytest.raises(DataError, match="u0"):
        leave_one_out_split(ds, n_neg=5, seed=0)


def test_split_not_enough_negatives_errors():
    ds = make_dataset([(0, 0, 1.0, 1), (0, 1, 1.0, 2)], n_items=5)
    with pytest.raises(DataError, match="negatives"):
        leave_one_out_split(ds, n_neg=4, seed=0)


def test_split_deterministic_on_disk(tmp_path, rng):
    recs = random_interactions(rng, 5, 40, density=0.3)
    ds = filter_min_interactions(recs, 1)
    paths = []
    for name in ("a", "b"):
        split = leave_one_out_split(ds, n_neg=7, seed=42)
        out = save_split(split, tmp_path / name)
        paths.append(out)
    for fname in ("train_ratings.tsv", "test_negatives.tsv", "meta.json"):
        assert (paths[0] / fname).read_bytes() == (paths[1] / fname).read_bytes()


def test_split_different_seeds_differ(rng):
    recs = random_interactions(rng, 5, 80, density=0.2)
    ds = filter_min_interactions(recs, 1)
    s1 = leave_one_out_split(ds, n_neg=10, seed=1)
    s2 = leave_one_out_split(ds, n_neg=10, seed=2)
    assert any((s1.test[u][1] != s2.test[u][1]).any() for u in s1.test)


# ---------------------------------------------------------------------------
# attributes

def test_load_attributes_first_appearance_order(tmp_path):
    f = tmp_path / "attr.tsv"
    f.write_text("u1\tM\nu2\tF\n")
    labels = load_attributes(f, ("u1", "u2"))
    assert labels.labels.tolist() == [0, 1]
    assert labels.class_names == ("M", "F")


def test_load_attributes_missing_user_errors(tmp_path):
    f = tmp_path / "attr.tsv"
    f.write_text("u1\tM\nu3\tF\n")
    with pytest.raises(DataError, match="u2"):
        load_attributes(f, ("u1", "u2", "u3"))


def test_load_attributes_conflicting_duplicate_errors(tmp_path):
    f = tmp_path / "attr.tsv"
    f.write_text("u1\tM\nu2\tF\nu1\tF\n")
    with pytest.raises(DataError, match="conflicting"):
        load_attributes(f, ("u1", "u2"))


def test_load_attributes_consistent_duplicate_ok(tmp_path):
    f = tmp_path / "attr.tsv"
    f.write_text("u1\tM\nu2\tF\nu1\tM\n")
    labels = load_attributes(f, ("u1", "u2"))
    assert labels.labels.tolist() == [0, 1]


def test_load_attributes_single_class_errors(tmp_path):
    f = tmp_path / "attr.tsv"
    f.write_text("u1\tM\nu2\tM\n")
    with pytest.raises(DataError, match="2 attribute classes"):
        load_attributes(f, ("u1", "u2"))


def test_load_attributes_ml100k_user_format(tmp_path):
    f = tmp_path / "u.user"
    f.write_text("1|24|M|technician|85711\n2|53|F|other|94043\n")
    labels = load_attributes(f, ("1", "2"), fmt="ml100k_user")
    assert labels.class_names == ("M", "F")
    assert labels.labels.tolist() == [0, 1]


# ---------------------------------------------------------------------------
# persistence round-trip

def _round_trip_setup(rng, tmp_path, with_labels=True):
    recs = random_interactions(rng, 6, 50, density=0.25)
    ds = filter_min_interactions(recs, 1)
    split = leave_one_out_split(ds, n_neg=9, seed=5)
    labels = None
    if with_labels:
        f = tmp_path / "attr.tsv"
        f.write_text("".join(f"u{k}\t{'M' if k % 2 else 'F'}\n" for k in range(6)))
        labels = load_attributes(f, ds.user_ids)
    return split, labels


def test_save_load_round_trip(tmp_path, rng):
    split, labels = _round_trip_setup(rng, tmp_path)
    out = save_split(split, tmp_path / "split", labels=labels)
    loaded, loaded_labels = load_split(out)
    assert loaded.n_neg == split.n_neg and loaded.seed == split.seed
    tr, ltr = split.train, loaded.train
    assert (ltr.n_users, ltr.n_items) == (tr.n_users, tr.n_items)
    assert (ltr.user_idx == tr.user_idx).all() and (ltr.item_idx == tr.item_idx).all()
    assert (ltr.rating == tr.rating).all() and (ltr.timestamp == tr.timestamp).all()
    assert ltr.user_ids == tr.user_ids and ltr.item_ids == tr.item_ids
    assert ltr.pos_sets == tr.pos_sets
    assert set(loaded.test) == set(split.test)
    for u in split.test:
        assert loaded.test[u][0] == split.test[u][0]
        assert (loaded.test[u][1] == split.test[u][1]).all()
    assert (loaded_labels.labels == labels.labels).all()
    assert loaded_labels.class_names == labels.class_names


def test_load_truncated_file_errors(tmp_path, rng):
    split, labels = _round_trip_setup(rng, tmp_path)
    out = save_split(split, tmp_path / "split", labels=labels)
    full = (out / "train_ratings.tsv").read_bytes()
    (out / "train_ratings.tsv").write_bytes(full[: len(full) // 2])
    with pytest.raises(DataError, match="checksum"):
        load_split(out)


def test_load_version_mismatch_errors(tmp_path, rng):
    import json
    split, _ = _round_trip_setup(rng, tmp_path, with_labels=False)
    out = save_split(split, tmp_path / "split")
    meta = json.loads((out / "meta.json").read_text())
    assert meta["format_version"] == 1  # header records the writing version
    meta["format_version"] = 99
    (out / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DataError, match="version"):
        load_split(out)
