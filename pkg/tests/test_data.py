import io
import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adrc_lfa.data import (
    HdiDataset,
    bundled_dataset,
    density,
    kfold,
    make_low_rank,
    parse_ratings,
    read_canonical,
    serialize,
    split_dataset,
    write_canonical,
)
from adrc_lfa.errors import ConfigError, DuplicateEntryWarning, EmptyDatasetError, ParseError


def _sorted_triples(ds):
    return sorted(zip(ds.rows.tolist(), ds.cols.tolist(), ds.values.tolist()))


@st.composite
def datasets(draw, min_size=1, max_size=60):
    nr = draw(st.integers(1, 12))
    nc = draw(st.integers(max(1, -(-min_size // nr)), 12))
    cells = draw(st.lists(st.integers(0, nr * nc - 1), min_size=min_size,
                          max_size=min(max_size, nr * nc), unique=True))
    vals = draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=len(cells), max_size=len(cells)))
    rows, cols = np.divmod(np.array(cells, dtype=np.int64), nc)
    return HdiDataset(rows, cols, np.array(vals), nr, nc)


def test_parse_space_delimited():
    ds = parse_ratings(io.StringIO("0 0 5.0\n1 2 3.0"))
    assert len(ds) == 2
    assert ds.shape == (2, 3)
    assert ds.value_max == 5.0
    assert ds.value_min == 3.0


def test_parse_movielens_format():
    ds = parse_ratings(io.StringIO("1::2::4.5::978300760"), delimiter="::", index_base=0)
    assert ds.instances == [(1, 2, 4.5)]


def test_parse_movielens_auto_base_shifts_to_zero():
    ds = parse_ratings(io.StringIO("1::2::4.5::978300760\n3::1::2\n"), delimiter="::")
    assert ds.instances == [(0, 1, 4.5), (2, 0, 2.0)]


@pytest.mark.parametrize("delimiter,text", [
    ("tab", "0\t1\t2.5\n"),
    ("comma", "0,1,2.5,extra\n"),
    ("whitespace", "  0   1\t 2.5  \n"),
])
def test_parse_delimiters(delimiter, text):
    assert parse_ratings(io.StringIO(text), delimiter=delimiter).instances == [(0, 1, 2.5)]


def test_parse_bytes_stream():
    ds = parse_ratings(io.BytesIO(b"0 0 1\n0 1 2\n"))
    assert len(ds) == 2


def test_parse_duplicates_keep_last_and_count():
    # generator knows there are exactly 10 repeats among 1000 lines
    rng = random.Random(3)
    cells = rng.sample(range(100 * 100), 990)
    lines = [(c // 100, c % 100, float(rng.randint(1, 5))) for c in cells]
    dup_src = rng.sample(range(990), 10)
    expect = {(r, c): v for r, c, v in lines}
    for j in dup_src:
        r, c, _ = lines[j]
        lines.append((r, c, 9.0))
        expect[(r, c)] = 9.0
    rng.shuffle(lines)
    # recompute expectations under the shuffled order: last occurrence wins
    expect = {}
    for r, c, v in lines:
        expect[(r, c)] = v
    text = "".join(f"{r} {c} {v}\n" for r, c, v in lines)
    with pytest.warns(DuplicateEntryWarning, match="10 duplicate"):
        ds = parse_ratings(io.StringIO(text), index_base=0)
    assert len(ds) == 990
    assert ds.duplicates_dropped == 10
    assert {(r, c): v for r, c, v in ds} == expect


@pytest.mark.parametrize("text,line", [
    ("0 0 1\n0 1\n", 2),
    ("0 0 1\n0 1 abc\n", 2),
    ("x 0 1\n", 1),
    ("0 0 nan\n", 1),
])
def test_parse_errors_carry_line_number(text, line):
    with pytest.raises(ParseError) as exc:
        parse_ratings(io.StringIO(text))
    assert exc.value.line_no == line


def test_parse_empty_stream():
    with pytest.raises(EmptyDatasetError):
        parse_ratings(io.StringIO(""))
    with pytest.raises(EmptyDatasetError):
        parse_ratings(io.StringIO("\n# comment\n"))


def test_dataset_invariants_enforced():
    with pytest.raises(ValueError):
        HdiDataset([0, 0], [1, 1], [1.0, 2.0], 1, 2)
    with pytest.raises(ValueError):
        HdiDataset([2], [0], [1.0], 2, 1)
    with pytest.raises(ValueError):
        HdiDataset([0], [0], [math.inf], 1, 1)


def test_dataset_is_immutable():
    ds = HdiDataset([0], [0], [1.0], 1, 1)
    with pytest.raises(ValueError):
        ds.values[0] = 2.0


def test_density_examples():
    assert density(HdiDataset([0], [0], [1.0], 1, 1)) == 1.0
    ds = HdiDataset(np.arange(5), np.arange(5), np.ones(5), 10, 10)
    assert density(ds) == pytest.approx(0.05, abs=1e-15)


def test_density_douban_shape():
    # 16,830,839 known entries in a 129,490 x 58,541 matrix is listed as 0.22%
    d = 16_830_839 / (129_490 * 58_541)
    assert round(d * 100, 2) == 0.22


def test_density_synthetic_table_shape_matches_hand_value():
    ds = make_low_rank(71, 107, rank=2, density=0.0131, seed=0)
    assert density(ds) == pytest.approx(len(ds) / (71 * 107), abs=1e-12)
    assert len(ds) == round(0.0131 * 71 * 107)


@given(datasets())
def test_density_in_unit_interval(ds):
    assert 0 < density(ds) <= 1


@given(datasets())
def test_serialize_round_trip(ds):
    back = parse_ratings(io.StringIO(serialize(ds)), delimiter="tab", index_base=0, shape=ds.shape)
    assert back == ds


def test_canonical_file_round_trip(tmp_path):
    ds = bundled_dataset("small")
    p = tmp_path / "r.tsv"
    write_canonical(ds, p)
    assert read_canonical(p, shape=ds.shape) == ds
    first = p.read_text().splitlines()[0].split("\t")
    assert len(first) == 3


def test_split_sizes():
    ds = HdiDataset(np.arange(10), np.zeros(10, dtype=int), np.arange(10.0), 10, 1)
    sp = split_dataset(ds, (0.7, 0.2, 0.1), seed=42)
    assert (len(sp.train), len(sp.test), len(sp.validation)) == (7, 2, 1)


def test_split_identity_fractions():
    ds = bundled_dataset("tiny")
    sp = split_dataset(ds, (1.0, 0.0, 0.0), seed=3)
    assert sp.train == ds
    assert len(sp.test) == 0 and len(sp.validation) == 0
    assert sp.test.shape == ds.shape


def test_split_deterministic():
    ds = bundled_dataset("small")
    a = split_dataset(ds, (0.7, 0.2, 0.1), seed=7)
    b = split_dataset(ds, (0.7, 0.2, 0.1), seed=7)
    for part in ("train", "validation", "test"):
        assert serialize(getattr(a, part)) == serialize(getattr(b, part))
    c = split_dataset(ds, (0.7, 0.2, 0.1), seed=8)
    assert c.train != a.train


@pytest.mark.parametrize("fractions", [(0.0, 0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1), (0.5, 0.5)])
def test_split_bad_fractions(fractions):
    ds = bundled_dataset("tiny")
    with pytest.raises(ConfigError):
        split_dataset(ds, fractions, 0)


def _assert_partition(source, split):
    parts = [split.train, split.validation, split.test]
    union = sorted(t for p in parts for t in _sorted_triples(p))
    assert union == _sorted_triples(source)
    keys = [set(zip(p.rows.tolist(), p.cols.tolist())) for p in parts]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert all(p.shape == source.shape for p in parts)


@settings(max_examples=50)
@given(datasets(min_size=2), st.integers(0, 2**31), st.sampled_from([(0.7, 0.2, 0.1), (0.6, 0.2, 0.2), (1.0, 0.0, 0.0)]))
def test_split_partition_property(ds, seed, fractions):
    _assert_partition(ds, split_dataset(ds, fractions, seed))


def test_kfold_sizes():
    ds = HdiDataset(np.arange(10), np.zeros(10, dtype=int), np.arange(10.0), 10, 1)
    folds = kfold(ds, 5, seed=0)
    assert len(folds) == 5
    assert all(len(s.test) == 2 and len(s.validation) == 2 and len(s.train) == 6 for s in folds)


def test_kfold_test_folds_cover_dataset():
    ds = make_low_rank(20, 20, 2, density=0.25, seed=5)
    assert len(ds) == 100
    folds = kfold(ds, 5, seed=1)
    union = sorted(t for s in folds for t in _sorted_triples(s.test))
    assert union == _sorted_triples(ds)
    for s in folds:
        _assert_partition(ds, s)


def test_kfold_rejects_k_below_3_and_k_above_n():
    ds = bundled_dataset("tiny")
    with pytest.raises(ConfigError):
        kfold(ds, 2, 0)
    with pytest.raises(ConfigError):
        kfold(HdiDataset([0, 1], [0, 0], [1.0, 1.0], 2, 1), 3, 0)


@settings(max_examples=30)
@given(datasets(min_size=5), st.integers(3, 5), st.integers(0, 1000))
def test_kfold_deterministic_partition(ds, k, seed):
    a = kfold(ds, k, seed)
    b = kfold(ds, k, seed)
    for sa, sb in zip(a, b):
        assert sa == sb
        _assert_partition(ds, sa)


def test_make_low_rank_noiseless_is_low_rank():
    ds = make_low_rank(12, 9, rank=2, density=1.0, seed=0)
    full = np.zeros(ds.shape)
    full[ds.rows, ds.cols] = ds.values
    assert np.linalg.matrix_rank(full, tol=1e-9) == 2


def test_bundled_presets():
    tiny = bundled_dataset("tiny")
    assert tiny.shape == (20, 15) and len(tiny) == 210
    big = bundled_dataset("ml100k")
    assert 9e4 < len(big) < 1.1e5
    with pytest.raises(ConfigError):
        bundled_dataset("nope")


def test_parse_without_warning_when_no_duplicates():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        parse_ratings(io.StringIO("0 0 1\n1 1 2\n"))
