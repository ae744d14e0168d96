from __future__ import annotations

import numpy as np
import pytest
from conftest import brute_force_lof
from hypothesis import given, settings
from hypothesis import strategies as st

from granular.errors import ConfigError
from granular.lof import LRD_EPS, LofConfig, default_k, knn_index, lof, lof_scores, lrd

LINE = np.array([0.0, 1.0, 2.0, 10.0])


def test_neighbors_of_far_point():
    index = knn_index(LINE, 2)
    assert index.neighbors[3].tolist() == [2, 1]
    assert index.distances[3].tolist() == [8.0, 9.0]


def test_line_lrd_hand_values():
    index = knn_index(LINE, 2)
    assert lrd(2, index) == pytest.approx(2 / 3, abs=1e-15)
    assert lrd(1, index) == pytest.approx(1 / 2, abs=1e-15)


def test_line_lof_of_far_point():
    scores = lof_scores(LINE, 2)
    # lrd = [1/2, 1/2, 2/3, 2/17]; LOF(10) = (2/3 + 1/2) / 2 * 17 / 2
    assert scores[3] == pytest.approx(119 / 24, abs=1e-12)
    assert round(scores[3], 2) == 4.96
    oracle, _ = brute_force_lof(LINE, 2)
    np.testing.assert_allclose(scores, oracle, rtol=0, atol=1e-12)


def test_matches_oracle_on_random_points():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 4))
    for k in (1, 5, 50):
        oracle, oracle_lrd = brute_force_lof(X, k)
        res = lof(X, k)
        assert np.max(np.abs(res.scores - oracle)) < 1e-9
        np.testing.assert_allclose(res.lrd, oracle_lrd, rtol=1e-12)


def test_ties_go_to_lower_index():
    X = np.array([0.0, 1.0, -1.0, 1.0, 5.0])
    index = knn_index(X, 2)
    assert index.neighbors[0].tolist() == [1, 2]
    assert index.neighbors[1].tolist() == [3, 0]


def test_duplicates_clamp():
    X = np.array([[0.0, 0.0]] * 4 + [[3.0, 4.0]])
    res = lof(X, 2)
    assert res.clamped[:4].all()
    assert not res.clamped[4]
    assert np.all(res.lrd[:4] == 1 / LRD_EPS)
    assert np.all(res.scores > 0)
    _, oracle_lrd = brute_force_lof(X, 2)
    np.testing.assert_array_equal(res.lrd, oracle_lrd)


def test_index_invariants():
    X = np.random.default_rng(1).standard_normal((60, 3))
    index = knn_index(X, 7)
    assert index.k == 7
    assert np.all(index.distances >= 0)
    assert np.all(np.diff(index.distances, axis=1) >= 0)
    assert not np.any(index.neighbors == np.arange(60)[:, None])


def test_grid_interior_is_inlier():
    g = np.arange(21.0)
    X = np.array([(a, b) for a in g for b in g])
    scores = lof_scores(X)
    center = 10 * 21 + 10
    assert abs(scores[center] - 1.0) < 0.2


@pytest.mark.parametrize("n, k", [(4, 3), (100, 50), (499, 50), (501, 51), (2000, 200)])
def test_default_k(n, k):
    assert default_k(n) == k


def test_k_out_of_range():
    with pytest.raises(ConfigError):
        LofConfig(5).resolve(5)
    with pytest.raises(ConfigError):
        knn_index(LINE, 0)


def test_full_neighborhood_is_order_free():
    X = np.random.default_rng(2).standard_normal((30, 2))
    perm = np.random.default_rng(3).permutation(30)
    a = lof_scores(X, 29)
    b = lof_scores(X[perm], 29)
    np.testing.assert_allclose(b, a[perm], rtol=1e-12)


points = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=30, deadline=None)
@given(points, st.integers(5, 40), st.integers(1, 5), st.floats(-1e3, 1e3))
def test_translation_and_permutation(rng, n, d, shift):
    X = rng.standard_normal((n, d))
    k = int(rng.integers(1, n))
    base = lof_scores(X, k)
    assert np.all(base > 0)
    np.testing.assert_allclose(lof_scores(X + shift, k), base, rtol=1e-6)
    perm = rng.permutation(n)
    np.testing.assert_allclose(lof_scores(X[perm], k), base[perm], rtol=1e-9)


@settings(max_examples=20, deadline=None)
@given(points, st.integers(5, 40))
def test_rotation_invariance(rng, n):
    X = rng.standard_normal((n, 3))
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    k = int(rng.integers(1, n))
    np.testing.assert_allclose(lof_scores(X @ q, k), lof_scores(X, k), rtol=1e-6)
