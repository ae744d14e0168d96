"""Ground truth from data-quality diffs or injected perturbations, and metrics on it.

Signs are +1 when the evaluated (corrupted or perturbed) value lies above
the clean one, -1 when below.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from granular.autoencoder import ReconstructionReport
from granular.data import Dataset, StandardizationParams
from granular.errors import DataError
from granular.ranking import DEFAULT_CUTOFFS, OutlierRanking, positive_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    """Affected observations with their affected dimensions and deviation signs."""

    dims: Mapping[Hashable, tuple[str, ...]] = field(default_factory=dict)
    signs: Mapping[Hashable, Mapping[str, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.dims) != set(self.signs):
            raise DataError("dims and signs must cover the same observations")
        for id_, A in self.dims.items():
            if not A:
                raise DataError(f"observation {id_!r} has no affected dimension")
            if set(A) != set(self.signs[id_]):
                raise DataError(f"signs for {id_!r} must be defined exactly on its dimensions")
            if any(s not in (-1, 1) for s in self.signs[id_].values()):
                raise DataError(f"signs for {id_!r} must be +1 or -1")

    @property
    def ids(self) -> list[Hashable]:
        return list(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return {k: set(v) for k, v in self.dims.items()} == {
            k: set(v) for k, v in other.dims.items()
        } and {k: dict(v) for k, v in self.signs.items()} == {
            k: dict(v) for k, v in other.signs.items()
        }

    def per_dimension_counts(self, columns: Sequence[str]) -> dict[str, int]:
        return {c: sum(c in A for A in self.dims.values()) for c in columns}

    def to_dict(self) -> dict:
        return {
            "affected": [
                {
                    "id": id_,
                    "dims": list(A),
                    "signs": {d: int(self.signs[id_][d]) for d in A},
                }
                for id_, A in self.dims.items()
            ]
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> GroundTruth:
        dims = {}
        signs = {}
        for entry in payload["affected"]:
            dims[entry["id"]] = tuple(entry["dims"])
            signs[entry["id"]] = {d: int(s) for d, s in entry["signs"].items()}
        return cls(dims, signs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> GroundTruth:
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such file: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def diff_datasets(pre: Dataset, post: Dataset, tolerance: float = 1e-9) -> GroundTruth:
    """Rows of ``pre`` that differ from the corrected ``post`` by more than ``tolerance``."""
    if pre.columns != post.columns:
        raise DataError("pre and post datasets have different columns")
    if set(pre.ids) != set(post.ids):
        raise DataError("pre and post datasets have different ids")
    where = post.row_index()
    post_values = post.values[[where[i] for i in pre.ids]]
    delta = pre.values - post_values
    changed = np.abs(delta) > tolerance
    dims = {}
    signs = {}
    for r in np.flatnonzero(changed.any(axis=1)):
        id_ = pre.ids[r]
        cols = np.flatnonzero(changed[r])
        dims[id_] = tuple(pre.columns[j] for j in cols)
        signs[id_] = {pre.columns[j]: int(np.sign(delta[r, j])) for j in cols}
    return GroundTruth(dims, signs)


@dataclass(frozen=True)
class PerturbationSpec:
    source_id: Hashable
    deltas: Mapping[str, float]

    def __post_init__(self) -> None:
        if not 1 <= len(self.deltas) <= 3:
            raise DataError(f"a perturbation touches 1-3 dimensions, got {len(self.deltas)}")
        if any(v == 0 or not math.isfinite(v) for v in self.deltas.values()):
            raise DataError("perturbation deltas must be finite and non-zero")

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "deltas": dict(self.deltas)}


def load_specs(path: str | Path) -> list[PerturbationSpec]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(payload, Mapping):
        payload = payload.get("perturbations", payload)
    try:
        return [PerturbationSpec(p["source_id"], {k: float(v) for k, v in p["deltas"].items()}) for p in payload]
    except (KeyError, TypeError, AttributeError) as exc:
        raise DataError(f"{path}: malformed perturbation spec ({exc})") from None


def save_specs(specs: Sequence[PerturbationSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in specs], indent=2) + "\n", encoding="utf-8")


def non_outlying_ids(rankings: Iterable[OutlierRanking]) -> list[Hashable]:
    """Ids ranked strictly below the median by every ranking."""
    rankings = list(rankings)
    ids = list(rankings[0].ids)
    keep = set(ids)
    for r in rankings:
        keep &= {id_ for id_, rk in zip(r.ids, r.ranks) if rk > r.n / 2}
    return [i for i in ids if i in keep]


def _new_ids(existing: Sequence[Hashable], count: int) -> list[Hashable]:
    if all(isinstance(i, (int, np.integer)) for i in existing):
        top = max(existing) + 1
        return list(range(top, top + count))
    taken = set(map(str, existing))
    out = []
    k = 0
    while len(out) < count:
        cand = f"synthetic-{k}"
        if cand not in taken:
            out.append(cand)
        k += 1
    return out


def inject_synthetic(
    data: Dataset,
    specs: Sequence[PerturbationSpec],
    rankings: Iterable[OutlierRanking] | None = None,
    scale: StandardizationParams | None = None,
) -> tuple[Dataset, GroundTruth]:
    """Append one perturbed copy of each spec's source row.

    Deltas are in standardized units; pass ``scale`` when ``data`` holds raw
    values. With ``rankings``, every source must rank below the median in
    all of them. Models must be refit on the returned dataset.
    """
    if not specs:
        return data, GroundTruth()
    where = data.row_index()
    if rankings is not None:
        allowed = set(non_outlying_ids(rankings))
    new_ids = _new_ids(data.ids, len(specs))
    rows = []
    dims = {}
    signs = {}
    for spec, new_id in zip(specs, new_ids):
        if spec.source_id not in where:
            raise DataError(f"perturbation source {spec.source_id!r} not in dataset")
        if rankings is not None and spec.source_id not in allowed:
            raise DataError(f"perturbation source {spec.source_id!r} is not non-outlying in every method")
        row = data.values[where[spec.source_id]].copy()
        for dim, delta in spec.deltas.items():
            j = data.column_index(dim)
            row[j] += delta * (scale.std[j] if scale is not None else 1.0)
        rows.append(row)
        dims[new_id] = tuple(spec.deltas)
        signs[new_id] = {d: int(np.sign(v)) for d, v in spec.deltas.items()}
    augmented = Dataset(data.columns, np.vstack([data.values, rows]), data.ids + tuple(new_ids))
    return augmented, GroundTruth(dims, signs)


def _sign_pattern(corr: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Signs that run most strongly against the correlation among ``dims``.

    Minimises s' C s over sign vectors (first entry fixed at +1); ties keep
    the first pattern found.
    """
    k = len(dims)
    sub = corr[np.ix_(dims, dims)]
    best = None
    for tail in itertools.product((1, -1), repeat=k - 1):
        s = np.array((1, *tail), dtype=np.float64)
        v = float(s @ sub @ s)
        if best is None or v < best[0] - 1e-12:
            best = (v, s)
    return best[1]


def make_specs(
    data: Dataset,
    candidates: Sequence[Hashable],
    mix: Sequence[int] = (5, 3, 2),
    magnitudes: Sequence[float] = (3.0, 5.0),
    seed: int = 0,
) -> list[PerturbationSpec]:
    """Draw synthetic perturbations in the given 1/2/3-dimension mix.

    Each spec perturbs a distinct source from ``candidates``. Dimensions and
    magnitudes are drawn at random. For multi-dimension perturbations the
    sign pattern opposes the observed correlations between the chosen
    dimensions (so the combined move is implausible, not just large); the
    overall sign is random.
    """
    rng = np.random.default_rng(seed)
    total = sum(mix)
    if len(candidates) < total:
        raise DataError(f"need {total} candidate sources, have {len(candidates)}")
    sizes = [k + 1 for k, count in enumerate(mix) for _ in range(count)]
    if max(sizes, default=0) > data.d:
        raise DataError(f"cannot perturb {max(sizes)} of {data.d} dimensions")
    corr = np.corrcoef(data.values.T) if data.d > 1 else np.ones((1, 1))
    corr = np.nan_to_num(corr)
    picks = rng.choice(len(candidates), size=total, replace=False)
    specs = []
    for k, pick in zip(sizes, picks):
        dims = sorted(rng.choice(data.d, size=k, replace=False).tolist())
        pattern = _sign_pattern(corr, dims) * rng.choice((-1.0, 1.0))
        mags = rng.choice(np.asarray(magnitudes, dtype=np.float64), size=k)
        deltas = {data.columns[j]: float(s * m) for j, s, m in zip(dims, pattern, mags)}
        specs.append(PerturbationSpec(candidates[int(pick)], deltas))
    return specs


def detection_rate(
    ranking: OutlierRanking,
    truth: GroundTruth,
    cutoffs: Sequence[float] = DEFAULT_CUTOFFS,
) -> dict[float, float]:
    """Share of affected observations inside the top ``cutoff`` percent."""
    if not len(truth):
        raise DataError("ground truth is empty")
    ranks = ranking.rank_of()
    missing = [i for i in truth.ids if i not in ranks]
    if missing:
        raise DataError(f"affected ids missing from ranking: {missing[:5]}")
    out = {}
    for c in cutoffs:
        top = positive_count(c, ranking.n)
        out[c] = sum(ranks[i] <= top for i in truth.ids) / len(truth)
    return out


@dataclass(frozen=True)
class FeedbackResult:
    per_id: dict[Hashable, int]
    flagged: tuple[Hashable, ...] = ()

    @property
    def mean(self) -> float:
        return sum(self.per_id.values()) / len(self.per_id) if self.per_id else math.nan


def _reports_by_id(
    reports: Sequence[ReconstructionReport] | Mapping[Hashable, ReconstructionReport],
) -> Mapping[Hashable, ReconstructionReport]:
    if isinstance(reports, Mapping):
        return reports
    return {r.id: r for r in reports}


def dimension_rank_accuracy(
    reports: Sequence[ReconstructionReport] | Mapping[Hashable, ReconstructionReport],
    truth: GroundTruth,
    columns: Sequence[str],
) -> FeedbackResult:
    """1 when the |A| largest absolute deviations fall exactly on the affected set A."""
    by_id = _reports_by_id(reports)
    pos = {c: j for j, c in enumerate(columns)}
    out = {}
    for id_, A in truth.dims.items():
        if id_ not in by_id:
            raise DataError(f"no reconstruction report for affected observation {id_!r}")
        top = set(by_id[id_].ranked_dimensions()[: len(A)].tolist())
        out[id_] = int(top == {pos[d] for d in A})
    return FeedbackResult(out)


def direction_accuracy(
    reports: Sequence[ReconstructionReport] | Mapping[Hashable, ReconstructionReport],
    truth: GroundTruth,
    columns: Sequence[str],
) -> FeedbackResult:
    """1 when every affected dimension's deviation has the ground-truth sign.

    A deviation of exactly zero on an affected dimension counts as wrong and
    flags the observation.
    """
    by_id = _reports_by_id(reports)
    pos = {c: j for j, c in enumerate(columns)}
    out = {}
    flagged = []
    for id_, A in truth.dims.items():
        if id_ not in by_id:
            raise DataError(f"no reconstruction report for affected observation {id_!r}")
        dev = by_id[id_].deviations
        got = [np.sign(dev[pos[d]]) for d in A]
        if any(g == 0 for g in got):
            flagged.append(id_)
        out[id_] = int(all(g == truth.signs[id_][d] for g, d in zip(got, A)))
    return FeedbackResult(out, tuple(flagged))


def per_dimension_direction(
    reports: Sequence[ReconstructionReport] | Mapping[Hashable, ReconstructionReport],
    truth: GroundTruth,
    columns: Sequence[str],
) -> dict[str, tuple[int, float]]:
    """For each dimension: affected-row count and share of those with the right sign."""
    by_id = _reports_by_id(reports)
    pos = {c: j for j, c in enumerate(columns)}
    out = {}
    for c in columns:
        hits = [
            np.sign(by_id[i].deviations[pos[c]]) == truth.signs[i][c]
            for i, A in truth.dims.items()
            if c in A
        ]
        out[c] = (len(hits), (sum(hits) / len(hits)) if hits else math.nan)
    return out


def average_rates(*tables: Mapping[float, float]) -> dict[float, float]:
    """Cell-wise mean of detection-rate tables over shared cutoffs."""
    keys = set(tables[0])
    for t in tables[1:]:
        keys &= set(t)
    return {k: sum(t[k] for t in tables) / len(tables) for k in sorted(keys)}
