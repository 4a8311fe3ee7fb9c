import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgraphrec.data import (
    DimensionMismatchError,
    EmptyDatasetError,
    FeatureFormatError,
    FeatureMatrix,
    IdMap,
    InteractionTable,
    NonFiniteError,
    ParseError,
    align_features,
    load_features,
    load_interactions,
    make_cold_start_split,
    read_bundle,
    split_interactions,
    write_bundle,
    write_features,
)


def _write(tmp_path, text, name="log.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_duplicates_collapse(tmp_path):
    p = _write(tmp_path, "u1\ti1\nu1\ti1\nu2\ti2\n")
    table, users, items = load_interactions(p)
    assert len(table) == 2
    assert len(users) == 2 and len(items) == 2


def test_whitespace_separated_lines_are_accepted(tmp_path):
    p = _write(tmp_path, "u1 i1\nu1 i1\nu2 i2\n")
    table, users, items = load_interactions(p)
    assert len(table) == 2


def test_comments_and_timestamps(tmp_path):
    p = _write(tmp_path, "# header\nu1\ti1\t100\nu2\ti1\t101.5\n")
    table, users, items = load_interactions(p)
    assert table.pair_set() == {(0, 0), (1, 0)}


def test_empty_file_errors(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_interactions(_write(tmp_path, ""))
    with pytest.raises(EmptyDatasetError):
        load_interactions(_write(tmp_path, "# only a comment\n"))


def test_malformed_line_reports_line_number(tmp_path):
    p = _write(tmp_path, "u1\ti1\nu2\ti2\tx\ty\n")
    with pytest.raises(ParseError) as e:
        load_interactions(p)
    assert e.value.line_no == 2
    assert ":2:" in str(e.value)


def test_bad_timestamp_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_interactions(_write(tmp_path, "u1\ti1\tyesterday\n"))


def test_id_map_order_is_first_appearance(tmp_path):
    p = _write(tmp_path, "b\tz\na\ty\nb\tx\n")
    _, users, items = load_interactions(p)
    assert users.external_ids == ["b", "a"]
    assert items.external_ids == ["z", "y", "x"]
    assert [items[x] for x in items.external_ids] == [0, 1, 2]


def test_dedup_matches_set_oracle_on_large_log(tmp_path):
    rng = np.random.default_rng(7)
    raw = [(f"u{rng.integers(300)}", f"i{rng.integers(200)}") for _ in range(10_000)]
    p = _write(tmp_path, "".join(f"{u}\t{i}\n" for u, i in raw))
    table, users, items = load_interactions(p)
    assert len(table) == len(set(raw))
    back = {(users.external_ids[u], items.external_ids[i]) for u, i in table.pairs}
    assert back == set(raw)


def _table(counts, n_items=50, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for u, c in enumerate(counts):
        pairs.extend((u, int(i)) for i in rng.choice(n_items, size=c, replace=False))
    return InteractionTable(np.array(pairs), len(counts), n_items, "all")


def test_split_counts():
    tr, va, te = split_interactions(_table([10]), (0.8, 0.1, 0.1), seed=3)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)


def test_small_users_stay_in_train():
    tr, va, te = split_interactions(_table([2, 1]), (0.8, 0.1, 0.1), seed=3)
    assert len(tr) == 3 and len(va) == 0 and len(te) == 0


def test_split_deterministic():
    t = _table([10, 7, 13, 4])
    a = split_interactions(t, (0.8, 0.1, 0.1), seed=11)
    b = split_interactions(t, (0.8, 0.1, 0.1), seed=11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.pairs, y.pairs)


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        split_interactions(_table([5]), (0.8, 0.3, 0.1))
    with pytest.raises(ValueError):
        split_interactions(_table([5]), (1.0, 0.0, 0.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=20), st.integers(0, 2**31 - 1))
def test_split_partitions_input(counts, seed):
    t = _table(counts)
    parts = split_interactions(t, (0.8, 0.1, 0.1), seed)
    sets = [p.pair_set() for p in parts]
    assert sets[0] | sets[1] | sets[2] == t.pair_set()
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    for p in parts:
        p.validate()


def test_cold_split_twenty_percent():
    t = _table([20] * 30, n_items=100)
    train2, cold = make_cold_start_split(t, 0.2, seed=5)
    assert len(cold) == 20
    assert not set(train2.items.tolist()) & set(cold.tolist())


def test_cold_split_zero_ratio():
    t = _table([5, 5])
    train2, cold = make_cold_start_split(t, 0.0, seed=1)
    assert len(cold) == 0
    np.testing.assert_array_equal(train2.pairs, t.pairs)


def test_cold_split_rejects_ratio_one():
    with pytest.raises(ValueError):
        make_cold_start_split(_table([3]), 1.0)


def test_cold_split_matches_set_filter_oracle():
    t = _table([3, 4, 2, 5], n_items=5, seed=9)
    train2, cold = make_cold_start_split(t, 0.4, seed=2)
    assert len(cold) == 2
    removed = t.pair_set() - train2.pair_set()
    oracle = {(u, i) for (u, i) in t.pair_set() if i in set(cold.tolist())}
    assert removed == oracle


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.floats(0, 0.95), st.integers(0, 1000))
def test_cold_split_properties(n_items, ratio, seed):
    t = _table([min(3, n_items)] * 10, n_items=n_items, seed=seed)
    train2, cold = make_cold_start_split(t, ratio, seed)
    assert len(cold) == int(np.floor(ratio * n_items + 1e-9))
    assert not set(train2.items.tolist()) & set(cold.tolist())


def test_feature_header_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(3, 768)).astype(np.float32)
    p = tmp_path / "f.mmgf"
    write_features(p, FeatureMatrix(vals, "image"))
    fm = load_features(p, n_items=3, expected_dim=768)
    assert fm.values.shape == (3, 768)
    assert fm.modality == "image"
    assert fm.values.tobytes() == vals.tobytes()
    raw = p.read_bytes()
    assert raw[:4] == b"MMGF"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert raw[8] == 1
    assert int.from_bytes(raw[9:13], "little") == 3
    assert int.from_bytes(raw[13:17], "little") == 768
    assert len(raw) == 17 + 3 * 768 * 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from(["text", "image", "fused"]), st.integers(0, 999))
def test_feature_roundtrip_bit_identical(tmp_path_factory, rows, cols, modality, seed):
    vals = np.random.default_rng(seed).normal(size=(rows, cols)).astype(np.float32)
    p = tmp_path_factory.mktemp("f") / "x.mmgf"
    write_features(p, FeatureMatrix(vals, modality))
    back = load_features(p)
    assert back.modality == modality
    assert back.values.tobytes() == vals.tobytes()


def test_feature_row_count_mismatch(tmp_path):
    p = tmp_path / "f.mmgf"
    write_features(p, FeatureMatrix(np.zeros((3, 768), np.float32), "text"))
    with pytest.raises(DimensionMismatchError):
        load_features(p, n_items=4)


def test_feature_bad_magic(tmp_path):
    p = tmp_path / "f.mmgf"
    p.write_bytes(b"NOPE" + b"\0" * 40)
    with pytest.raises(FeatureFormatError):
        load_features(p)


def test_feature_non_finite(tmp_path):
    vals = np.zeros((2, 4), np.float32)
    vals[1, 2] = np.nan
    p = tmp_path / "f.mmgf"
    write_features(p, FeatureMatrix(vals, "text"))
    with pytest.raises(NonFiniteError):
        load_features(p)


def test_feature_errors_are_distinct():
    kinds = {FeatureFormatError, DimensionMismatchError, NonFiniteError}
    assert len(kinds) == 3
    assert not issubclass(FeatureFormatError, DimensionMismatchError)


def test_align_features_keeps_feature_only_items():
    item_map = IdMap.from_sequence(["a", "b", "c"])
    fm = FeatureMatrix(np.array([[1.0, 0.0], [0.0, 2.0]], np.float32), "text")
    out = align_features(fm, ["c", "a"], item_map)
    np.testing.assert_array_equal(out.values, [[0, 2], [0, 0], [1, 0]])


def test_bundle_roundtrip(tmp_path):
    from mmgraphrec.synthetic import SyntheticSpec, generate, to_dataset

    ds = to_dataset(generate(SyntheticSpec(n_users=20, n_items=15, n_clusters=3, dim=8)))
    fp = write_bundle(tmp_path / "b", ds)
    back = read_bundle(tmp_path / "b")
    assert back.fingerprint == fp
    for s in ("train", "val", "test"):
        np.testing.assert_array_equal(back.split(s).pairs, ds.split(s).pairs)
    assert back.text.values.tobytes() == ds.text.values.tobytes()
    assert back.item_map.external_ids == ds.item_map.external_ids
