"""Outlier rankings, top-k% labels, labeling correlations and subset selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np

from granular.errors import ConfigError, DataError

METHODS = ("ae", "lof", "iforest")
DEFAULT_CUTOFFS = (5, 10, 15)


@dataclass(frozen=True)
class OutlierRanking:
    """Scores with ranks (1 = most outlying) and deciles (1 = top tenth)."""

    method: str
    ids: tuple[Hashable, ...]
    scores: np.ndarray
    ranks: np.ndarray
    deciles: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    def order(self) -> np.ndarray:
        """Row positions from rank 1 to rank n."""
        return np.argsort(self.ranks, kind="stable")

    def rank_of(self) -> dict[Hashable, int]:
        return {id_: int(r) for id_, r in zip(self.ids, self.ranks)}

    def decile_of(self) -> dict[Hashable, int]:
        return {id_: int(d) for id_, d in zip(self.ids, self.deciles)}


def _sort_key(id_: Hashable):
    # Integers sort numerically, anything else by its string form.
    return (0, id_, "") if isinstance(id_, (int, np.integer)) else (1, 0, str(id_))


def rank(
    scores: Sequence[float] | np.ndarray,
    method: str,
    ids: Sequence[Hashable] | None = None,
) -> OutlierRanking:
    """Rank by descending score; equal scores go to the smaller id first."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DataError("need a non-empty vector of scores")
    if not np.all(np.isfinite(s)):
        bad = int(np.flatnonzero(~np.isfinite(s))[0])
        raise DataError(f"non-finite {method} score at position {bad}")
    n = s.size
    ids = tuple(range(n)) if ids is None else tuple(ids)
    if len(ids) != n:
        raise DataError(f"{len(ids)} ids for {n} scores")
    id_order = sorted(range(n), key=lambda i: _sort_key(ids[i]))
    id_pos = np.empty(n, dtype=np.int64)
    id_pos[id_order] = np.arange(n)
    order = np.lexsort((id_pos, -s))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    deciles = np.ceil(10 * ranks / n).astype(np.int64)
    return OutlierRanking(method, ids, s.copy(), ranks, deciles)


def positive_count(cutoff: float, n: int) -> int:
    """round(cutoff * n / 100) with halves rounded up, never below 1."""
    if not 0 < cutoff < 100:
        raise ConfigError(f"cutoff must lie strictly between 0 and 100, got {cutoff}")
    exact = Fraction(cutoff) * n / 100
    return max(1, math.floor(exact + Fraction(1, 2)))


@dataclass(frozen=True)
class CutoffLabels:
    method: str
    cutoff: float
    ids: tuple[Hashable, ...]
    labels: np.ndarray  # 0/1 per id, aligned with ``ids``

    @property
    def name(self) -> str:
        return f"{self.method}_{self.cutoff:g}"

    def as_dict(self) -> dict[Hashable, int]:
        return {id_: int(v) for id_, v in zip(self.ids, self.labels)}


def top_percent_labels(ranking: OutlierRanking, cutoff: float) -> CutoffLabels:
    count = positive_count(cutoff, ranking.n)
    labels = (ranking.ranks <= count).astype(np.int64)
    return CutoffLabels(ranking.method, cutoff, ranking.ids, labels)


def method_label_correlation(a: CutoffLabels | np.ndarray, b: CutoffLabels | np.ndarray) -> float:
    """Phi coefficient of two binary labelings; NaN when either is constant."""
    x = np.asarray(a.labels if isinstance(a, CutoffLabels) else a, dtype=np.int64)
    y = np.asarray(b.labels if isinstance(b, CutoffLabels) else b, dtype=np.int64)
    if x.shape != y.shape:
        raise DataError(f"labelings differ in length: {x.size} vs {y.size}")
    n11 = int(np.sum((x == 1) & (y == 1)))
    n10 = int(np.sum((x == 1) & (y == 0)))
    n01 = int(np.sum((x == 0) & (y == 1)))
    n00 = int(np.sum((x == 0) & (y == 0)))
    denom = (n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)
    if denom == 0:
        return math.nan
    return (n11 * n00 - n10 * n01) / math.sqrt(denom)


def correlation_matrix(labelings: Sequence[CutoffLabels]) -> tuple[list[str], np.ndarray]:
    names = [lab.name for lab in labelings]
    m = len(labelings)
    out = np.eye(m)
    for i, j in combinations(range(m), 2):
        out[i, j] = out[j, i] = method_label_correlation(labelings[i], labelings[j])
    for i, lab in enumerate(labelings):
        if lab.labels.min() == lab.labels.max():
            out[i, i] = math.nan
    return names, out


def _band(mean_decile: float) -> int:
    if mean_decile <= 3:
        return 0
    if mean_decile <= 7:
        return 1
    return 2


def select_validation_subset(
    rankings: Sequence[OutlierRanking] | Mapping[str, OutlierRanking],
    size: int,
    seed: int = 0,
) -> list[Hashable]:
    """Pick observations for expert labeling.

    Half (rounded down) are the observations the methods disagree on most,
    measured by the largest decile gap between any two rankings; only
    non-zero gaps count, ties go to the smaller id. The rest are drawn at
    random, in equal shares, from the high (mean decile <= 3), medium
    (<= 7) and low bands, and also fill any shortfall of the disagreement
    half. Results depend only on ids, deciles and ``seed``.
    """
    if isinstance(rankings, Mapping):
        rankings = list(rankings.values())
    if not rankings:
        raise DataError("need at least one ranking")
    ids = sorted(rankings[0].ids, key=_sort_key)
    for r in rankings[1:]:
        if set(r.ids) != set(ids):
            raise DataError("rankings cover different observations")
    n = len(ids)
    if not 0 <= size <= n:
        raise DataError(f"subset size {size} outside [0, {n}]")
    deciles = np.array([[r.decile_of()[i] for i in ids] for r in rankings], dtype=np.int64)
    gap = deciles.max(axis=0) - deciles.min(axis=0)
    mean_dec = deciles.mean(axis=0)

    disagree_quota = size // 2
    by_gap = sorted((i for i in range(n) if gap[i] > 0), key=lambda i: (-gap[i], i))
    chosen = by_gap[:disagree_quota]
    taken = set(chosen)

    rng = np.random.default_rng(seed)
    remaining = size - len(chosen)
    bands: list[list[int]] = [[], [], []]
    for i in range(n):
        if i not in taken:
            bands[_band(mean_dec[i])].append(i)
    pools = [list(rng.permutation(b)) if b else [] for b in bands]
    quotas = [remaining // 3 + (1 if k < remaining % 3 else 0) for k in range(3)]
    picks: list[int] = []
    for k in range(3):
        take = min(quotas[k], len(pools[k]))
        picks.extend(int(i) for i in pools[k][:take])
        pools[k] = pools[k][take:]
    # Shortfall in one band spills over to the others, highest band first.
    k = 0
    while len(picks) < remaining:
        if pools[k]:
            picks.append(int(pools[k].pop(0)))
        k = (k + 1) % 3
    return [ids[i] for i in chosen + picks]
