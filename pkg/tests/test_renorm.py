import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from infoflow.errors import EmptyInput, NoCodingSource, UnmappedLabel, ValueOutsideBins
from infoflow.ingest import FeatureSpec, table_from_rows
from infoflow.renorm import (
    Bin,
    DigitalCodedMatrix,
    DigitalColumn,
    PossiblyGappedHistogram,
    build_gapped_histogram,
    code_categorical,
    code_continuous,
    ordinal_codes,
    renormalize_matrix,
)

samples = st.lists(st.integers(0, 60), min_size=2, max_size=80)


def sup_cdf_error(hist, x):
    """Sup distance between the empirical CDF and ``hist.cdf``, probed at and just below every data point."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    err = 0.0
    for t in np.unique(x):
        right = np.sum(x <= t) / n
        left = np.sum(x < t) / n
        below = np.nextafter(t, -math.inf)
        err = max(err, abs(right - hist.cdf(t)), abs(left - hist.cdf(below)))
    return err


def test_constant_column_is_one_bin():
    h = build_gapped_histogram([3.0] * 9)
    assert h.k == 1 and h.gaps == ()
    assert h.bins[0] == Bin(3.0, 3.0, 9)
    assert code_continuous([3.0] * 9, h).codes.tolist() == [0] * 9


def test_empty_input():
    with pytest.raises(EmptyInput):
        build_gapped_histogram([])


def test_two_block_mixture_has_one_gap():
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.uniform(0, 1, 1000), rng.uniform(10, 11, 1000)])
    h = build_gapped_histogram(x)
    assert len(h.gaps) == 1
    assert h.gaps[0] == pytest.approx(oracles.widest_empty_interval(x))
    assert h.cdf(5.0) == pytest.approx(0.5)
    with pytest.raises(ValueOutsideBins):
        h.locate(5.0)


@given(samples)
def test_bins_partition_sample(xs):
    h = build_gapped_histogram(xs)
    assert 1 <= h.k <= 10
    assert h.counts.sum() == len(xs)
    assert all(b.lo <= b.hi for b in h.bins)
    assert all(a.hi < b.lo for a, b in zip(h.bins, h.bins[1:]))
    codes = code_continuous(xs, h).codes
    assert np.bincount(codes, minlength=h.k).tolist() == h.counts.tolist()
    order = np.argsort(xs, kind="stable")
    assert np.all(np.diff(codes[order]) >= 0)


@given(samples)
def test_gaps_are_empty_and_wide(xs):
    h = build_gapped_histogram(xs, gap_factor=2.0)
    u = np.unique(xs)
    median_spacing = np.median(np.diff(u)) if u.size > 1 else 0.0
    for lo, hi in h.gaps:
        assert not np.any((u > lo) & (u < hi))
        assert hi - lo > 2.0 * median_spacing - 1e-9


@given(samples)
def test_fit_never_worse_than_one_bin(xs):
    h = build_gapped_histogram(xs)
    single = PossiblyGappedHistogram((Bin(float(min(xs)), float(max(xs)), len(xs)),), (), len(xs))
    err = sup_cdf_error(h, xs)
    assert err <= sup_cdf_error(single, xs) + 1e-9
    assert err <= 1 / math.sqrt(len(xs)) + 1e-9 or h.k == min(10, len(set(xs)))


@given(samples, st.sampled_from([0.5, 2.0, 3.0, 1000.0]), st.integers(-500, 500))
def test_affine_invariance(xs, a, b):
    x = np.asarray(xs, dtype=float)
    h1 = build_gapped_histogram(x)
    h2 = build_gapped_histogram(a * x + b)
    assert h1.k == h2.k and len(h1.gaps) == len(h2.gaps)
    assert np.array_equal(code_continuous(x, h1).codes, code_continuous(a * x + b, h2).codes)


def test_locate_midpoint_rule():
    h = PossiblyGappedHistogram((Bin(0.0, 1.0, 2), Bin(3.0, 4.0, 2)), (), 4)
    assert h.locate(1.9) == 0
    assert h.locate(2.0) == 1
    with pytest.raises(ValueOutsideBins):
        h.locate(-0.1)


def test_histogram_dict_round_trip():
    h = build_gapped_histogram([0, 0, 1, 2, 9, 10, 10])
    assert PossiblyGappedHistogram.from_dict(h.to_dict()) == h


def test_ordinal_codes():
    assert ordinal_codes(1) == [0]
    assert ordinal_codes(2) == [0, 9]
    assert ordinal_codes(4) == [0, 3, 6, 9]
    assert ordinal_codes(3) == [0, 5, 9]


def test_categorical_sources():
    binary = FeatureSpec("b", "covariate", "binary")
    col = code_categorical(["yes", "no", "yes"], binary)
    assert col.codes.tolist() == [5, 0, 5] and col.method == "binary_default"

    hinted = FeatureSpec("g", "covariate", "categorical", ordinal_hint=("lo", "mid", "hi"))
    assert code_categorical(["hi", "lo", "mid"], hinted).codes.tolist() == [9, 0, 5]

    mapped = FeatureSpec("m", "covariate", "categorical", coding_map={"a": 2, "b": 2, "c": 7})
    col = code_categorical(["a", "b", "c"], mapped)
    assert col.codes.tolist() == [2, 2, 7]
    assert col.code_meaning == {2: ("a", "b"), 7: ("c",)}
    with pytest.raises(UnmappedLabel):
        code_categorical(["a", "z"], mapped)

    plain = FeatureSpec("p", "covariate", "categorical")
    with pytest.raises(NoCodingSource):
        code_categorical(["x", "y"], plain)
    anchor = DigitalColumn(np.array([0, 1, 8, 9, 4]), {}, "num")
    col = code_categorical(["x", "x", "y", "y", "z"], plain, anchor=anchor)
    assert col.codes.tolist() == [1, 1, 9, 9, 4]
    assert col.method == "anchor:num"


def test_anchor_chosen_by_mutual_ce():
    rows = [[str(v), str(v * 10 + 1), str(7 - v % 3), "a" if v < 10 else "b"] for v in range(20)]
    specs = [
        FeatureSpec("u", "covariate", "continuous"),
        FeatureSpec("w", "covariate", "continuous"),
        FeatureSpec("z", "covariate", "continuous"),
        FeatureSpec("cat", "covariate", "categorical"),
    ]
    m = renormalize_matrix(table_from_rows(["u", "w", "z", "cat"], rows, specs))
    assert m.column("cat").method == "anchor:u"


def test_heart_coding(heart_table, heart_coded, tmp_path):
    assert heart_coded.n == 270 and heart_coded.m == 14
    v7 = dict(zip(heart_table.column("V7"), heart_coded.codes("V7")))
    assert v7 == {"0": 9, "1": 3, "2": 7}
    v11 = dict(zip(heart_table.column("V11"), heart_coded.codes("V11")))
    assert v11 == {"1": 3, "2": 6, "3": 9}
    x = heart_coded.matrix()
    assert x.min() >= 0 and x.max() <= 9
    for name in ("V1", "V4", "V5", "V8", "V10"):
        assert 1 <= heart_coded.column(name).histogram.k <= 10

    path = tmp_path / "coded.csv"
    heart_coded.to_csv(path)
    back = DigitalCodedMatrix.from_csv(path)
    assert back.subjects == heart_coded.subjects
    assert np.array_equal(back.matrix(), x)
    assert back.manifest == heart_coded.manifest
    assert back.column("V1").histogram == heart_coded.column("V1").histogram
