import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curator.core import (
    DimensionMismatch,
    DuplicateLabel,
    UnknownLabel,
    VectorStore,
    as_vector,
    check_label,
    check_tenant,
    percentile,
    recall_at_k,
    squared_l2,
    squared_l2_rows,
    top_k_arrays,
    top_k_by_distance,
)


def test_squared_l2_identity_and_unit_vectors():
    assert squared_l2([0, 0], [0, 0]) == 0.0
    assert squared_l2([1, 0], [0, 1]) == 2.0


def test_squared_l2_matches_naive_loop_192d():
    rng = np.random.default_rng(1)
    a = rng.normal(size=192).astype(np.float32)
    b = rng.normal(size=192).astype(np.float32)
    naive = 0.0
    for i in range(192):
        naive += (float(a[i]) - float(b[i])) ** 2
    assert squared_l2(a, b) == pytest.approx(naive, rel=1e-4)


def test_squared_l2_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        squared_l2([1.0, 2.0], [1.0, 2.0, 3.0])


def test_rows_distance_independent_of_batch():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(50, 17)).astype(np.float32)
    x = rng.normal(size=17).astype(np.float32)
    full = squared_l2_rows(rows, x)
    for i in (0, 13, 49):
        assert squared_l2_rows(rows[i:i + 1], x)[0] == full[i]
    assert np.array_equal(squared_l2_rows(rows[::-1], x), full[::-1])


@given(st.lists(st.floats(-1e3, 1e3, width=32), min_size=1, max_size=16).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.floats(-1e3, 1e3, width=32),
                                             min_size=len(a), max_size=len(a)))))
def test_squared_l2_symmetric_and_zero_iff_equal(pair):
    a, b = pair
    assert squared_l2(a, b) == squared_l2(b, a)
    assert squared_l2(a, a) == 0.0
    assert (squared_l2(a, b) == 0.0) == (np.float32(a).tolist() == np.float32(b).tolist())


def test_top_k_examples():
    assert top_k_by_distance([], 5) == []
    assert top_k_by_distance([(7, 2.0), (3, 1.0)], 1) == [(3, 1.0)]
    assert top_k_by_distance([(1, 1.0), (2, 1.0)], 1) == [(1, 1.0)]
    with pytest.raises(ValueError):
        top_k_by_distance([(1, 1.0)], 0)


@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from([0.0, 0.5, 1.0, 2.5, 7.0])),
                unique_by=lambda c: c[0], max_size=40),
       st.integers(1, 45))
def test_top_k_is_sorted_prefix(cands, k):
    full = sorted(cands, key=lambda c: (c[1], c[0]))
    assert top_k_by_distance(cands, k) == full[:k]
    labels = np.array([c[0] for c in cands], dtype=np.uint64)
    dists = np.array([c[1] for c in cands], dtype=np.float64)
    assert top_k_arrays(labels, dists, k) == full[:k]


def test_as_vector_validation():
    assert as_vector([1, 2, 3]).dtype == np.float32
    with pytest.raises(DimensionMismatch):
        as_vector([1, 2], dim=3)
    with pytest.raises(DimensionMismatch):
        as_vector([[1, 2]])
    with pytest.raises(ValueError):
        as_vector([1.0, math.nan])
    with pytest.raises(ValueError):
        as_vector([math.inf, 0.0])


def test_identifier_ranges():
    assert check_label(2**64 - 1) == 2**64 - 1
    assert check_tenant(2**32 - 1) == 2**32 - 1
    with pytest.raises(ValueError):
        check_label(-1)
    with pytest.raises(ValueError):
        check_label(2**64)
    with pytest.raises(ValueError):
        check_tenant(2**32)


def test_store_add_get_remove_and_growth():
    s = VectorStore(3, capacity=2)
    for i in range(10):
        s.add(i, np.full(3, i, np.float32), owner=i % 2)
    assert len(s) == 10
    assert s.get(7).data.tolist() == [7.0, 7.0, 7.0]  # survived two reallocations
    assert s.get(7).access_list == {1}
    with pytest.raises(DuplicateLabel):
        s.add(3, np.zeros(3), 0)
    s.remove(3)
    assert 3 not in s
    with pytest.raises(UnknownLabel):
        s.get(3)
    with pytest.raises(UnknownLabel):
        s.remove(3)
    s.add(100, np.ones(3), 5)  # reuses the freed row
    assert s.get(100).data.tolist() == [1.0, 1.0, 1.0]
    assert s.get(4).data.tolist() == [4.0, 4.0, 4.0]
    assert s.distances([4, 100], np.zeros(3, np.float32)).tolist() == [48.0, 3.0]
    assert s.accessible(1) == [1, 5, 7, 9]
    assert s.vector_bytes() == 10 * 3 * 4


def test_record_data_is_read_only():
    s = VectorStore(2)
    rec = s.add(1, np.array([1.0, 2.0]), 0)
    with pytest.raises(ValueError):
        rec.data[0] = 5.0
    snap = rec.snapshot()
    snap.access_list.add(9)
    assert rec.access_list == {0}


def test_recall_and_percentile():
    assert recall_at_k([1, 2, 3], [1, 2, 4], 3) == pytest.approx(2 / 3)
    assert recall_at_k([], [], 10) == 1.0
    assert recall_at_k([5], [5], 10) == 1.0  # denominator is min(k, |truth|)
    assert math.isnan(percentile([], 99))
    assert percentile([1.0, 2.0, 3.0], 50) == 2.0
