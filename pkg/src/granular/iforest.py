"""Isolation Forest: random axis-parallel partitioning, scored by path length."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from granular.data import Dataset
from granular.errors import ConfigError, DataError

EULER_GAMMA = 0.5772156649


def harmonic(i: float) -> float:
    return math.log(i) + EULER_GAMMA


def average_path_length(m: int) -> float:
    """Mean unsuccessful-search path length c(m) of a binary search tree on m points."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * harmonic(m - 1) - 2.0 * (m - 1) / m


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 100
    subsample_size: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tree_count < 1:
            raise ConfigError("tree_count must be >= 1")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ConfigError("subsample_size must be >= 1")

    def resolve_subsample(self, n: int) -> int:
        psi = min(256, n) if self.subsample_size is None else self.subsample_size
        if psi > n:
            raise ConfigError(f"subsample_size {psi} exceeds n={n}")
        return psi


@dataclass(frozen=True)
class IsolationTree:
    """Flat node arrays; node 0 is the root.

    Internal nodes have ``feature >= 0`` and send ``x[feature] < threshold``
    left. External nodes have ``feature == -1`` and record the number of
    training points that reached them in ``size``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


def _uniform_open(rng: np.random.Generator, lo: float, hi: float) -> float:
    while True:
        v = rng.uniform(lo, hi)
        if lo < v < hi:
            return float(v)


def build_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    size: list[int] = []
    depth: list[int] = []

    def new_node(d: int) -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        size.append(0)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(0), np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        d = depth[node]
        size[node] = len(rows)
        if d >= height_limit or len(rows) <= 1:
            continue
        sub = X[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        q = int(splittable[rng.integers(splittable.size)])
        p = _uniform_open(rng, lo[q], hi[q])
        mask = sub[:, q] < p
        feature[node] = q
        threshold[node] = p
        lnode = new_node(d + 1)
        rnode = new_node(d + 1)
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, rows[~mask]))
        stack.append((lnode, rows[mask]))
    return IsolationTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
        np.array(depth, dtype=np.int64),
    )


@dataclass(frozen=True)
class IsolationForest:
    trees: tuple[IsolationTree, ...]
    subsample_size: int
    height_limit: int

    @property
    def normalizer(self) -> float:
        # c(1) = 0 would divide by zero; floor at c(2).
        return average_path_length(max(self.subsample_size, 2))


def _matrix(data: Dataset | np.ndarray) -> np.ndarray:
    X = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def build_forest(data: Dataset | np.ndarray, config: ForestConfig | None = None) -> IsolationForest:
    """Grow ``tree_count`` trees, each on its own subsample without replacement.

    Tree ``i`` draws from the ``i``-th child of ``SeedSequence(seed)``, so a
    tree depends only on the seed and its index.
    """
    config = config or ForestConfig()
    X = _matrix(data)
    n = X.shape[0]
    if n < 2:
        raise DataError("isolation forest needs at least 2 observations")
    psi = config.resolve_subsample(n)
    height_limit = max(1, math.ceil(math.log2(psi))) if psi > 1 else 0
    trees = []
    for seq in np.random.SeedSequence(config.seed).spawn(config.tree_count):
        rng = np.random.default_rng(seq)
        rows = rng.choice(n, size=psi, replace=False) if psi < n else rng.permutation(n)
        trees.append(build_tree(X[rows], height_limit, rng))
    return IsolationForest(tuple(trees), psi, height_limit)


def path_lengths(tree: IsolationTree, X: np.ndarray) -> np.ndarray:
    """h(x) for every row: edges to the external node, plus c(size) when size > 1."""
    X = _matrix(X)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = tree.feature[node]
        active = f >= 0
        if not active.any():
            break
        a = np.flatnonzero(active)
        go_left = X[rows[a], f[a]] < tree.threshold[node[a]]
        node[a] = np.where(go_left, tree.left[node[a]], tree.right[node[a]])
    c = np.array([average_path_length(int(s)) for s in tree.size])
    return tree.depth[node] + c[node]


def path_length(tree: IsolationTree, x: np.ndarray) -> float:
    return float(path_lengths(tree, np.asarray(x, dtype=np.float64)[None, :])[0])


def score_from_path_length(mean_h, subsample_size: int):
    """s = 2^(-E[h] / c(psi))."""
    return np.power(2.0, -np.asarray(mean_h, dtype=np.float64) / average_path_length(max(subsample_size, 2)))


def mean_path_lengths(data: Dataset | np.ndarray, forest: IsolationForest) -> np.ndarray:
    X = _matrix(data)
    total = np.zeros(X.shape[0])
    for tree in forest.trees:
        total += path_lengths(tree, X)
    return total / len(forest.trees)


def iforest_scores(data: Dataset | np.ndarray, forest: IsolationForest) -> np.ndarray:
    return score_from_path_length(mean_path_lengths(data, forest), forest.subsample_size)
