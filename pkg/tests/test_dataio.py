import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_ratings
from fedlr import rng
from fedlr.dataio import (
    DataError,
    RawRating,
    build_table,
    leave_one_out,
    parse_ratings,
    sample_negatives,
    sample_train_negatives,
    write_split,
)


def _dense_user(uid, n_items, start=0, ts0=100):
    return [RawRating(uid, start + k, 4.0, ts0 + k) for k in range(n_items)]


# --- parse_ratings ---------------------------------------------------------------


def test_parse_movielens_line(tmp_path):
    p = tmp_path / "r.dat"
    p.write_text("1::1193::5::978300760\n")
    assert parse_ratings(p) == [RawRating(1, 1193, 5.0, 978300760)]


def test_parse_tab_with_and_without_timestamp(tmp_path):
    p = write_ratings(tmp_path / "a.tsv", [(3, 7, 1, 50), (3, 8, 2, 40)])
    assert [r.timestamp for r in parse_ratings(p, "tab")] == [50, 40]
    q = tmp_path / "b.tsv"
    q.write_text("\n3\t7\t1\n3\t8\t2\n")
    # missing timestamps fall back to line numbers (blank line 1 is skipped)
    assert [r.timestamp for r in parse_ratings(q)] == [2, 3]


def test_parse_keeps_file_order(tmp_path):
    rows = [(2, 1, 1, 9), (1, 5, 3, 2), (2, 0, 5, 1)]
    p = write_ratings(tmp_path / "r.dat", rows, "::")
    assert [(r.user_id, r.item_id) for r in parse_ratings(p, "movielens")] == [(2, 1), (1, 5), (2, 0)]


@pytest.mark.parametrize("body,lineno", [
    ("1::2::3::4\n1::x::3::4\n", 2),
    ("1::2::3\n", 1),
    ("1::2::3::4\n\n5::6::7::8::9\n", 3),
])
def test_malformed_line_reports_line_number(tmp_path, body, lineno):
    p = tmp_path / "bad.dat"
    p.write_text(body)
    with pytest.raises(DataError, match=f":{lineno}:"):
        parse_ratings(p)


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "empty.dat"
    p.write_text("\n\n")
    with pytest.raises(DataError):
        parse_ratings(p)


def test_negative_ids_rejected(tmp_path):
    p = tmp_path / "neg.dat"
    p.write_text("-1::2::3::4\n")
    with pytest.raises(DataError):
        parse_ratings(p)


# --- build_table -----------------------------------------------------------------


def test_min_interactions_boundary():
    ratings = _dense_user(10, 20) + _dense_user(11, 19, start=100)
    t = build_table(ratings, 20)
    assert t.num_users == 1 and t.user_ids[0] == 10
    # items are indexed over surviving users only
    assert t.num_items == 20


def test_no_surviving_users():
    with pytest.raises(DataError):
        build_table(_dense_user(1, 5), 20)


def test_sorted_by_time_then_raw_item():
    ratings = [RawRating(1, 30, 1, 5), RawRating(1, 10, 1, 5), RawRating(1, 20, 1, 1)]
    t = build_table(ratings, 1)
    raw = [t.item_ids[i] for i in t.items[0]]
    assert raw == [20, 10, 30]
    assert t.times[0].tolist() == [1, 5, 5]


def test_duplicate_pair_keeps_latest():
    ratings = [RawRating(1, 10, 1, 5), RawRating(1, 10, 3, 9), RawRating(1, 11, 1, 7)]
    t = build_table(ratings, 1)
    assert [t.item_ids[i] for i in t.items[0]] == [11, 10]
    assert t.num_interactions == 2


def test_reindexing_is_a_bijection():
    ratings = [RawRating(u, i, 1, u * 10 + i) for u in (40, 7, 99) for i in (5, 500, 12, 77)]
    t = build_table(ratings, 1)
    assert list(t.user_ids) == [7, 40, 99]
    assert list(t.item_ids) == [5, 12, 77, 500]
    for u, raw in enumerate(t.user_ids):
        assert t.user_index(raw) == u
    for i, raw in enumerate(t.item_ids):
        assert t.item_index(raw) == i
    assert all((it < t.num_items).all() for it in t.items)


# --- leave_one_out ---------------------------------------------------------------


def _toy_table(n_filler=120):
    # user 1 is the hand-checked one; two filler users each own half the catalogue
    ratings = [RawRating(1, 1, 5, 10), RawRating(1, 2, 5, 20), RawRating(1, 3, 5, 30)]
    ratings += [RawRating(2, 100 + k, 5, k) for k in range(n_filler)]
    ratings += [RawRating(3, 100 + n_filler + k, 5, k) for k in range(n_filler)]
    return build_table(ratings, 3)


def test_last_interaction_is_test():
    t = _toy_table()
    s = leave_one_out(t, seed=0)
    u = t.user_index(1)
    assert t.item_ids[s.test_items[u]] == 3
    assert sorted(t.item_ids[i] for i in s.train.items[u]) == [1, 2]


def test_second_to_last_is_validation():
    t = _toy_table()
    s = leave_one_out(t, with_validation=True, seed=0)
    u = t.user_index(1)
    assert t.item_ids[s.val_items[u]] == 2
    assert [t.item_ids[i] for i in s.train.items[u]] == [1]


def test_partition_and_negatives_disjoint():
    t = _toy_table(130)
    s = leave_one_out(t, with_validation=True, seed=3)
    for u in range(t.num_users):
        parts = list(s.train.items[u]) + [s.test_items[u], s.val_items[u]]
        assert sorted(parts) == sorted(t.items[u].tolist())
        negs = s.negatives[u]
        assert len(negs) == 99 and len(set(negs.tolist())) == 99
        assert not set(negs.tolist()) & set(t.items[u].tolist())


def test_user_with_all_items_has_no_negatives():
    ratings = [RawRating(1, i, 1, i) for i in range(50)]
    with pytest.raises(DataError, match="user 0"):
        leave_one_out(build_table(ratings, 1), seed=0)


def test_too_few_interactions_names_user():
    ratings = [RawRating(5, i, 1, i) for i in range(2)] + [RawRating(6, i, 1, i) for i in range(200)]
    t = build_table(ratings, 1)
    with pytest.raises(DataError, match="raw id 5"):
        leave_one_out(t, with_validation=True)


def test_split_serialisation_is_reproducible(tmp_path, synthetic_path):
    outs = []
    for k in range(2):
        t = build_table(parse_ratings(synthetic_path), 20)
        s = leave_one_out(t, seed=11)
        write_split(s, tmp_path / f"s{k}.tsv", tmp_path / f"n{k}.tsv")
        outs.append(((tmp_path / f"s{k}.tsv").read_bytes(), (tmp_path / f"n{k}.tsv").read_bytes()))
    assert outs[0] == outs[1]
    line = (tmp_path / "n0.tsv").read_text().splitlines()[0]
    user, items = line.split("\t")
    assert user == "0" and len(items.split(",")) == 99
    tags = {ln.split("\t")[2] for ln in (tmp_path / "s0.tsv").read_text().splitlines()}
    assert tags == {"train", "test"}


def test_negatives_use_per_user_streams():
    # user u's negatives only depend on (seed, u), not on other users
    t = _toy_table(130)
    s = leave_one_out(t, seed=4)
    u = 1
    pool = np.setdiff1d(np.arange(t.num_items), t.items[u])
    g = rng.stream(4, rng.EVAL_NEGATIVES, u)
    assert np.array_equal(s.negatives[u], g.choice(pool, size=99, replace=False))


# --- training negatives ------------------------------------------------------------


def test_train_negative_support():
    g = rng.stream(0, rng.TRAIN, 0)
    negs = sample_negatives(np.array([0, 1]), 5, 200, g)
    assert set(negs.tolist()) <= {2, 3, 4}
    assert set(negs.tolist()) == {2, 3, 4}  # 200 uniform draws over 3 items hit all of them


def test_train_negative_count_and_determinism():
    ratings = [RawRating(1, i, 1, i) for i in range(16)] + [RawRating(2, i, 1, i) for i in range(60)]
    t = build_table(ratings, 1)
    u = t.user_index(1)
    a = sample_train_negatives(t, u, 4, rng.stream(9, rng.TRAIN, 0, u))
    b = sample_train_negatives(t, u, 4, rng.stream(9, rng.TRAIN, 0, u))
    assert len(a) == 64
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_train_negatives(t, u, 0, rng.stream(9, rng.TRAIN, 0, u))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), data=st.data())
def test_negatives_never_hit_positives(n, data):
    pos = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n - 1, unique=True))
    g = rng.stream(data.draw(st.integers(0, 1000)), rng.TRAIN)
    negs = sample_negatives(np.array(pos), n, 50, g)
    assert len(negs) == 50
    assert not set(negs.tolist()) & set(pos)
    assert all(0 <= x < n for x in negs.tolist())


def test_ml100k_counts(ml100k_path):
    ratings = parse_ratings(ml100k_path)
    assert len(ratings) == 100_000
    t = build_table(ratings, 20)
    # every ML-100K user already has >= 20 ratings
    assert (t.num_users, t.num_items) == (943, 1682)
