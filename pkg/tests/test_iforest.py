from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granular.errors import ConfigError, DataError
from granular.iforest import (
    ForestConfig,
    average_path_length,
    build_forest,
    build_tree,
    iforest_scores,
    mean_path_lengths,
    path_length,
    path_lengths,
    score_from_path_length,
)


def walk(tree, x) -> float:
    """Recursive traversal used as an oracle for the vectorized one."""

    def go(node):
        f = tree.feature[node]
        if f < 0:
            return tree.depth[node] + average_path_length(int(tree.size[node]))
        child = tree.left[node] if x[f] < tree.threshold[node] else tree.right[node]
        return go(child)

    return float(go(0))


def test_c_special_cases():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == 1.0


def test_c_of_three_by_hand():
    # 2 (ln 2 + gamma) - 2 * 2 / 3
    assert average_path_length(3) == pytest.approx(1.207392357586557, abs=1e-15)


def test_c_of_256():
    expected = 2 * (math.log(255) + 0.5772156649) - 2 * 255 / 256
    assert average_path_length(256) == pytest.approx(expected, rel=1e-15)


def test_two_points_split_at_root():
    X = np.array([[0.0], [1.0]])
    tree = build_tree(X, 1, np.random.default_rng(0))
    assert tree.feature[0] == 0
    assert 0.0 < tree.threshold[0] < 1.0
    assert path_length(tree, X[0]) == 1.0
    assert path_length(tree, X[1]) == 1.0
    assert tree.size[tree.left[0]] == 1 and tree.size[tree.right[0]] == 1


def test_identical_points_make_single_leaf():
    X = np.ones((10, 3))
    tree = build_tree(X, 4, np.random.default_rng(0))
    assert tree.node_count == 1
    assert path_length(tree, X[0]) == pytest.approx(average_path_length(10))


def test_leaf_of_size_three_adds_c3():
    X = np.array([[0.0], [0.0], [0.0], [5.0]])
    tree = build_tree(X, 3, np.random.default_rng(1))
    # The only possible split separates 5 from the three zeros.
    assert path_length(tree, np.array([0.0])) == pytest.approx(1 + 1.207392357586557, abs=1e-15)
    assert path_length(tree, np.array([5.0])) == 1.0


def test_split_inside_range_and_depth_bounded():
    X = np.random.default_rng(3).standard_normal((256, 4))
    forest = build_forest(X, ForestConfig(tree_count=10, seed=5))
    assert forest.height_limit == 8
    for tree in forest.trees:
        assert tree.max_depth <= forest.height_limit
        assert tree.size[0] == 256
        internal = np.flatnonzero(tree.feature >= 0)
        for node in internal:
            assert tree.size[node] == tree.size[tree.left[node]] + tree.size[tree.right[node]]


def test_vectorized_matches_recursive():
    X = np.random.default_rng(4).standard_normal((300, 5))
    forest = build_forest(X, ForestConfig(tree_count=5, seed=1))
    for tree in forest.trees:
        vec = path_lengths(tree, X)
        np.testing.assert_array_equal(vec, [walk(tree, x) for x in X])


def test_mean_path_equal_to_normalizer_scores_half():
    for psi in (2, 3, 10, 256):
        assert score_from_path_length(average_path_length(psi), psi) == 0.5


def test_default_subsample():
    assert ForestConfig().resolve_subsample(1000) == 256
    assert ForestConfig().resolve_subsample(40) == 40
    with pytest.raises(ConfigError):
        ForestConfig(subsample_size=50).resolve_subsample(40)
    with pytest.raises(ConfigError):
        ForestConfig(tree_count=0)


def test_needs_two_rows():
    with pytest.raises(DataError):
        build_forest(np.zeros((1, 2)))


def test_forest_is_deterministic():
    X = np.random.default_rng(6).standard_normal((120, 3))
    a = build_forest(X, ForestConfig(tree_count=20, seed=9))
    b = build_forest(X, ForestConfig(tree_count=20, seed=9))
    np.testing.assert_array_equal(iforest_scores(X, a), iforest_scores(X, b))
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.threshold, tb.threshold)


def test_tree_depends_only_on_its_index():
    X = np.random.default_rng(7).standard_normal((120, 3))
    small = build_forest(X, ForestConfig(tree_count=3, seed=2))
    large = build_forest(X, ForestConfig(tree_count=30, seed=2))
    for ta, tb in zip(small.trees, large.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)


def test_planted_outlier_scores_highest():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.standard_normal((200, 3)), [[100.0, 0.0, 0.0]]])
    s = iforest_scores(X, build_forest(X, ForestConfig(seed=0)))
    assert int(np.argmax(s)) == 200
    assert s[200] > 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 300), st.integers(1, 4))
def test_scores_in_unit_interval(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if seed % 3 == 0:
        X = np.round(X)  # many ties
    forest = build_forest(X, ForestConfig(tree_count=10, seed=seed))
    s = iforest_scores(X, forest)
    assert np.all(s > 0) and np.all(s <= 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scores_independent_of_evaluation_order(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((80, 3))
    forest = build_forest(X, ForestConfig(tree_count=10, seed=seed))
    perm = rng.permutation(80)
    np.testing.assert_array_equal(
        mean_path_lengths(X[perm], forest), mean_path_lengths(X, forest)[perm]
    )
