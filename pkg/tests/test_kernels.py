"""Compiled and numpy kernel paths must agree with each other and with brute force."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqextract import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _brute_topk(row, k):
    return [i for i, _ in sorted(enumerate(row), key=lambda t: (-t[1], t[0]))[:k]]


def _scores(seed, shape, levels=4):
    # few distinct values so ties are common
    return np.random.default_rng(seed).integers(0, levels, size=shape).astype(np.float32)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 12))
def test_topk_numpy_matches_brute_force(seed, rows, n):
    s = _scores(seed, (rows, n))
    k = 1 + seed % n
    out = kernels.topk_rows_numpy(s, k)
    for r in range(rows):
        assert list(out[r]) == _brute_topk(s[r], k)


@needs_numba
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 12))
def test_topk_numba_matches_numpy(seed, rows, n):
    s = _scores(seed, (rows, n))
    k = 1 + seed % n
    assert np.array_equal(kernels.topk_rows_numba(s, k), kernels.topk_rows_numpy(s, k))


def test_topk_tie_example():
    s = np.array([[0.1, 0.9, 0.3, 0.9, 0.2]], dtype=np.float32)
    assert kernels.topk_rows(s, 3).tolist() == [[1, 3, 2]]


@given(st.integers(0, 10**6))
def test_ranks_match_brute_force(seed):
    s = _scores(seed, (3, 9))
    items = np.random.default_rng(seed + 1).integers(0, 9, size=(3, 2))
    expect = [[_brute_topk(s[r], 9).index(i) + 1 for i in items[r]] for r in range(3)]
    assert kernels.ranks_of_numpy(s, items).tolist() == expect
    if _accel.HAVE_NUMBA:
        assert kernels.ranks_of_numba(s, items).tolist() == expect


@needs_numba
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_repair_pairs_paths_agree(seed, k):
    rng = np.random.default_rng(seed)
    n = k + 4
    P = 5
    black = np.stack([rng.permutation(n)[:k] for _ in range(P)])
    order = np.stack([rng.permutation(n) for _ in range(P)])
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(1, n + 1)[None].repeat(P, 0), axis=1)
    wr = np.take_along_axis(rank, black, axis=1)
    a = kernels.repair_pairs_numpy(black, order[:, :k], wr)
    b = kernels.repair_pairs_numba(black, order[:, :k], wr)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@given(st.integers(0, 10**6), st.integers(0, 5), st.integers(1, 4))
def test_sample_excluding_properties(seed, m_ex, m):
    rng = np.random.default_rng(seed)
    n = 12
    P = 4
    exclude = np.stack([rng.permutation(n)[:m_ex] for _ in range(P)]) if m_ex else np.zeros((P, 0), dtype=np.int64)
    u = rng.random((P, m))
    out = kernels.sample_excluding_numpy(n, exclude, u)
    for r in range(P):
        assert len(set(out[r])) == m
        assert not set(out[r]) & set(exclude[r])
    if _accel.HAVE_NUMBA:
        assert np.array_equal(out, kernels.sample_excluding_numba(n, exclude, u))


def test_sample_excluding_ragged_rows_agree():
    exclude = np.array([[0, 0], [1, 2]])  # first row excludes one item, second two
    u = np.full((2, 3), 0.5)
    out = kernels.sample_excluding_numpy(6, exclude, u)
    assert 0 not in out[0] and not {1, 2} & set(out[1])
    if _accel.HAVE_NUMBA:
        assert np.array_equal(out, kernels.sample_excluding_numba(6, exclude, u))


def test_sample_excluding_pool_too_small():
    with pytest.raises(ValueError):
        kernels.sample_excluding_numpy(3, np.array([[0, 1]]), np.zeros((1, 2)))


def test_backend_flag_matches_module_state():
    assert kernels.BACKEND in ("numba", "numpy")
