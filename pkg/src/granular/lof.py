"""Local Outlier Factor over exact Euclidean k-nearest neighbours."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from granular.data import Dataset
from granular.errors import ConfigError, DataError

# Mean reachability distances below this are clamped; lrd becomes 1/LRD_EPS.
LRD_EPS = 1e-12
# Memory budget for one block of pairwise coordinate differences.
_BLOCK_BYTES = 32 * 2**20


def default_k(n: int) -> int:
    """max(ceil(0.1 n), 50), capped at n - 1."""
    return max(1, min(max(math.ceil(0.1 * n), 50), n - 1))


@dataclass(frozen=True)
class LofConfig:
    k: int | None = None

    def resolve(self, n: int) -> int:
        k = default_k(n) if self.k is None else self.k
        if not 1 <= k <= n - 1:
            raise ConfigError(f"k must be within [1, {n - 1}] for n={n}, got {k}")
        return k


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Row ``p`` of ``neighbors``/``distances`` holds N_k(p), nearest first."""

    neighbors: np.ndarray  # (n, k) int
    distances: np.ndarray  # (n, k) float

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def k_distance(self) -> np.ndarray:
        return self.distances[:, -1]


def _as_matrix(data: Dataset | np.ndarray) -> np.ndarray:
    X = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def knn_index(data: Dataset | np.ndarray, k: int) -> NeighborhoodIndex:
    """Exact k-NN by blocked brute force.

    Distances come from explicit coordinate differences, so they equal a
    naive pairwise loop. Ties at the k-th distance go to the lower row index:
    every observation gets exactly ``k`` neighbours and never itself.
    """
    X = _as_matrix(data)
    n, d = X.shape
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must be within [1, {n - 1}] for n={n}, got {k}")
    neighbors = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k))
    block = max(1, _BLOCK_BYTES // (8 * n * d))
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = X[start:stop, None, :] - X[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
        kth = np.partition(dist, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            cand = np.flatnonzero(dist[r] <= kth[r])
            order = cand[np.argsort(dist[r, cand], kind="stable")[:k]]
            neighbors[start + r] = order
            distances[start + r] = dist[r, order]
    return NeighborhoodIndex(neighbors, distances)


@dataclass(frozen=True)
class LofResult:
    scores: np.ndarray
    lrd: np.ndarray
    clamped: np.ndarray  # True where the lrd hit the 1/eps clamp
    k: int


def local_reachability_density(index: NeighborhoodIndex) -> tuple[np.ndarray, np.ndarray]:
    """lrd for every observation and a mask of clamped entries.

    reach-dist(p, o) = max(k-distance(o), d(p, o)); lrd(p) is the inverse of
    its mean over N_k(p).
    """
    reach = np.maximum(index.k_distance[index.neighbors], index.distances)
    mean_reach = reach.mean(axis=1)
    clamped = mean_reach < LRD_EPS
    lrd = 1.0 / np.where(clamped, LRD_EPS, mean_reach)
    return lrd, clamped


def lrd(p: int, index: NeighborhoodIndex) -> float:
    return float(local_reachability_density(index)[0][p])


def lof(data: Dataset | np.ndarray, config: LofConfig | int | None = None) -> LofResult:
    X = _as_matrix(data)
    if X.shape[0] < 2:
        raise DataError("LOF needs at least 2 observations")
    if config is None or isinstance(config, int):
        config = LofConfig(config)
    k = config.resolve(X.shape[0])
    index = knn_index(X, k)
    densities, clamped = local_reachability_density(index)
    scores = densities[index.neighbors].mean(axis=1) / densities
    return LofResult(scores, densities, clamped, k)


def lof_scores(data: Dataset | np.ndarray, config: LofConfig | int | None = None) -> np.ndarray:
    return lof(data, config).scores
