"""Expert label sheets: consistency, agreement, and majority-vote ensembles.

Labels are 0 (normal), 1 (outlier) and 2 (undecided). An expert who sees
the same observation several times (injected duplicates) is credited with
that label if every copy agrees, and with 2 otherwise.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from granular.errors import DataError
from granular.ranking import CutoffLabels

logger = logging.getLogger(__name__)

NORMAL, OUTLIER, UNDECIDED = 0, 1, 2
CLASSES = (NORMAL, OUTLIER, UNDECIDED)
SHEET_COLUMNS = (
    "expert_id",
    "item_id",
    "observation_id",
    "dup_group",
    "label",
    "dims_used",
    "relevance",
    "difficulty",
)
_LABEL_ALIASES = {"0": 0, "1": 1, "2": 2, "na": 2, "undecided": 2, "": 2}


@dataclass(frozen=True)
class ExpertProfile:
    expert_id: Hashable
    job_relevance: int
    difficulty: int

    def __post_init__(self) -> None:
        for name in ("job_relevance", "difficulty"):
            v = getattr(self, name)
            if not 1 <= v <= 10:
                raise DataError(f"expert {self.expert_id}: {name} must be in 1..10, got {v}")


@dataclass(frozen=True)
class PresentedItem:
    item_id: int
    observation_id: Hashable
    dup_group: int | None = None


@dataclass(frozen=True)
class LabelRecord:
    expert_id: Hashable
    item_id: int
    observation_id: Hashable
    label: int
    dup_group: int | None = None
    dims_used: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.label not in CLASSES:
            raise DataError(f"label must be 0, 1 or 2, got {self.label!r}")


@dataclass(frozen=True)
class ExpertLabelSheet:
    records: tuple[LabelRecord, ...]
    profiles: Mapping[Hashable, ExpertProfile] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        group_obs: dict[int, Hashable] = {}
        group_items: dict[int, set[int]] = defaultdict(set)
        item_obs: dict[int, Hashable] = {}
        seen: set[tuple[Hashable, int]] = set()
        for r in self.records:
            key = (r.expert_id, r.item_id)
            if key in seen:
                raise DataError(f"expert {r.expert_id!r} labeled item {r.item_id} twice")
            seen.add(key)
            if item_obs.setdefault(r.item_id, r.observation_id) != r.observation_id:
                raise DataError(f"item {r.item_id} maps to more than one observation")
            if r.dup_group is not None:
                if group_obs.setdefault(r.dup_group, r.observation_id) != r.observation_id:
                    raise DataError(f"duplicate group {r.dup_group} spans several observations")
                group_items[r.dup_group].add(r.item_id)
        for g, items in group_items.items():
            if len(items) < 2:
                raise DataError(f"duplicate group {g} has a single item")

    @property
    def experts(self) -> list[Hashable]:
        return list(dict.fromkeys(r.expert_id for r in self.records))

    @property
    def observations(self) -> list[Hashable]:
        return list(dict.fromkeys(r.observation_id for r in self.records))

    @property
    def items(self) -> list[int]:
        return sorted({r.item_id for r in self.records})

    def for_expert(self, expert_id: Hashable) -> list[LabelRecord]:
        out = [r for r in self.records if r.expert_id == expert_id]
        if not out:
            raise DataError(f"no labels from expert {expert_id!r}")
        return out

    def expert_labels(self, expert_id: Hashable) -> dict[Hashable, int]:
        """One label per observation: the common label of all copies, else undecided."""
        labels: dict[Hashable, set[int]] = defaultdict(set)
        for r in self.for_expert(expert_id):
            labels[r.observation_id].add(r.label)
        return {obs: (next(iter(s)) if len(s) == 1 else UNDECIDED) for obs, s in labels.items()}

    def item_labels(self, expert_id: Hashable) -> dict[int, int]:
        return {r.item_id: r.label for r in self.for_expert(expert_id)}


def _parse_hashable(value: str) -> Hashable:
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        return value


def load_sheet(path: str | Path) -> ExpertLabelSheet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    records = []
    profiles: dict[Hashable, ExpertProfile] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SHEET_COLUMNS[:5]) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            raw_label = (row["label"] or "").strip().lower()
            if raw_label not in _LABEL_ALIASES:
                raise DataError(f"{path}:{line}: bad label {row['label']!r}")
            expert = _parse_hashable(row["expert_id"])
            dup = (row.get("dup_group") or "").strip()
            dims = tuple(d.strip() for d in (row.get("dims_used") or "").split(";") if d.strip())
            try:
                records.append(
                    LabelRecord(
                        expert_id=expert,
                        item_id=int(row["item_id"]),
                        observation_id=_parse_hashable(row["observation_id"]),
                        label=_LABEL_ALIASES[raw_label],
                        dup_group=int(dup) if dup else None,
                        dims_used=dims,
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            rel = (row.get("relevance") or "").strip()
            dif = (row.get("difficulty") or "").strip()
            if rel and dif:
                profile = ExpertProfile(expert, int(rel), int(dif))
                if profiles.setdefault(expert, profile) != profile:
                    raise DataError(f"{path}:{line}: conflicting profile for expert {expert!r}")
    return ExpertLabelSheet(tuple(records), profiles)


def write_sheet(sheet: ExpertLabelSheet, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SHEET_COLUMNS)
        for r in sheet.records:
            p = sheet.profiles.get(r.expert_id)
            writer.writerow(
                [
                    r.expert_id,
                    r.item_id,
                    r.observation_id,
                    "" if r.dup_group is None else r.dup_group,
                    r.label,
                    ";".join(r.dims_used),
                    "" if p is None else p.job_relevance,
                    "" if p is None else p.difficulty,
                ]
            )


def inject_duplicates(items: Sequence[Hashable], count: int, seed: int = 0) -> list[PresentedItem]:
    """Copy ``count`` randomly chosen observations and shuffle the result.

    Both copies of a duplicated observation share a ``dup_group``; item ids
    number the shuffled presentation order from 0.
    """
    items = list(items)
    if len(set(items)) != len(items):
        raise DataError("items must be distinct observations")
    if not 0 <= count <= len(items):
        raise DataError(f"cannot duplicate {count} of {len(items)} items")
    if count == 0:
        return [PresentedItem(i, obs) for i, obs in enumerate(items)]
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(items), size=count, replace=False).tolist())
    group = {pos: g for g, pos in enumerate(picked)}
    pool = [(items[p], group.get(p)) for p in range(len(items))]
    pool += [(items[p], group[p]) for p in picked]
    order = rng.permutation(len(pool))
    return [PresentedItem(i, pool[j][0], pool[j][1]) for i, j in enumerate(order)]


def consistency(sheet: ExpertLabelSheet, expert_id: Hashable) -> float:
    """Share of duplicate groups whose copies all got the same label."""
    groups: dict[int, set[int]] = defaultdict(set)
    for r in sheet.for_expert(expert_id):
        if r.dup_group is not None:
            groups[r.dup_group].add(r.label)
    if not groups:
        raise DataError(f"expert {expert_id!r} saw no duplicated observations")
    return sum(len(s) == 1 for s in groups.values()) / len(groups)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(a: Sequence[int], b: Sequence[int]) -> float:
    """Spearman's rho with mid-ranks for ties.

    Pairs where either side is undecided (2) are dropped. Returns NaN when
    one side is constant on the remaining pairs.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DataError(f"label vectors differ in length: {a.size} vs {b.size}")
    keep = (a != UNDECIDED) & (b != UNDECIDED)
    if keep.sum() < 3:
        raise DataError(f"need at least 3 jointly labeled items, got {int(keep.sum())}")
    ra = _midranks(a[keep].astype(np.float64))
    rb = _midranks(b[keep].astype(np.float64))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        return math.nan
    return float(ra @ rb) / denom


def expert_spearman_matrix(sheet: ExpertLabelSheet) -> tuple[list[Hashable], np.ndarray]:
    """Pairwise rho between experts over the presented items they share."""
    experts = sheet.experts
    labels = [sheet.item_labels(e) for e in experts]
    out = np.full((len(experts), len(experts)), math.nan)
    for i in range(len(experts)):
        for j in range(i, len(experts)):
            shared = sorted(labels[i].keys() & labels[j].keys())
            try:
                rho = spearman([labels[i][k] for k in shared], [labels[j][k] for k in shared])
            except DataError:
                rho = math.nan
            out[i, j] = out[j, i] = rho
    return experts, out


@dataclass(frozen=True)
class DimensionUsage:
    experts: tuple[Hashable, ...]
    columns: tuple[str, ...]
    counts: np.ndarray  # experts x columns

    @property
    def per_dimension(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def per_expert(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def used_by_all(self) -> list[str]:
        """Dimensions every expert cited at least once."""
        used = (self.counts > 0).all(axis=0)
        return [c for c, u in zip(self.columns, used) if u]

    def experts_using(self) -> dict[str, int]:
        return {c: int(v) for c, v in zip(self.columns, (self.counts > 0).sum(axis=0))}


def dimension_usage(sheet: ExpertLabelSheet, columns: Sequence[str]) -> DimensionUsage:
    columns = tuple(columns)
    pos = {c: j for j, c in enumerate(columns)}
    experts = tuple(sheet.experts)
    row = {e: i for i, e in enumerate(experts)}
    counts = np.zeros((len(experts), len(columns)), dtype=np.int64)
    for r in sheet.records:
        for dim in r.dims_used:
            if dim not in pos:
                raise DataError(f"unknown dimension {dim!r} cited by expert {r.expert_id!r}")
            counts[row[r.expert_id], pos[dim]] += 1
    return DimensionUsage(experts, columns, counts)


@dataclass(frozen=True)
class VoteResult:
    observation_id: Hashable
    label: int
    tallies: tuple[float, float, float]
    tie: bool = False

    @property
    def decided(self) -> bool:
        return self.label != UNDECIDED


def tally(votes: Iterable[tuple[int, Fraction | int]], observation_id: Hashable = None) -> VoteResult:
    """Argmax of (weighted) class tallies; a tied maximum yields undecided with ``tie``."""
    sums = [Fraction(0)] * 3
    any_vote = False
    for label, weight in votes:
        sums[label] += Fraction(weight)
        any_vote = True
    if not any_vote:
        raise DataError(f"no votes for observation {observation_id!r}")
    best = max(sums)
    winners = [j for j in CLASSES if sums[j] == best]
    tallies = tuple(float(s) for s in sums)
    if len(winners) > 1:
        return VoteResult(observation_id, UNDECIDED, tallies, True)  # type: ignore[arg-type]
    return VoteResult(observation_id, winners[0], tallies, False)  # type: ignore[arg-type]


def _votes_for(sheet: ExpertLabelSheet, observation_id: Hashable) -> list[tuple[Hashable, int]]:
    out = []
    for e in sheet.experts:
        label = sheet.expert_labels(e).get(observation_id)
        if label is not None:
            out.append((e, label))
    return out


def expert_weight(
    profile: ExpertProfile,
    weighting: str,
    difficulty_transform: str = "reciprocal",
) -> Fraction:
    """Vote weight from self-assessment.

    ``job_relevance`` uses the relevance score as is. ``inverse_difficulty``
    uses 1/difficulty, or 11 - difficulty with ``difficulty_transform="reversed"``.
    """
    if weighting == "job_relevance":
        return Fraction(profile.job_relevance)
    if weighting == "inverse_difficulty":
        if difficulty_transform == "reciprocal":
            return Fraction(1, profile.difficulty)
        if difficulty_transform == "reversed":
            return Fraction(11 - profile.difficulty)
        raise ValueError(f"unknown difficulty transform {difficulty_transform!r}")
    raise ValueError(f"unknown weighting {weighting!r}")


def majority_vote_unweighted(sheet: ExpertLabelSheet, observation_id: Hashable) -> VoteResult:
    return tally(((label, 1) for _, label in _votes_for(sheet, observation_id)), observation_id)


def majority_vote_weighted(
    sheet: ExpertLabelSheet,
    profiles: Mapping[Hashable, ExpertProfile] | None,
    observation_id: Hashable,
    weighting: str = "job_relevance",
    difficulty_transform: str = "reciprocal",
) -> VoteResult:
    profiles = sheet.profiles if profiles is None else profiles
    votes = []
    for expert, label in _votes_for(sheet, observation_id):
        if expert not in profiles:
            raise DataError(f"no profile for expert {expert!r}")
        votes.append((label, expert_weight(profiles[expert], weighting, difficulty_transform)))
    return tally(votes, observation_id)


def vote_all(
    sheet: ExpertLabelSheet,
    weighting: str | None = None,
    difficulty_transform: str = "reciprocal",
) -> dict[Hashable, VoteResult]:
    """Ensemble label for every observation on the sheet (``weighting=None`` is unweighted)."""
    per_expert = {e: sheet.expert_labels(e) for e in sheet.experts}
    weights: dict[Hashable, Fraction] = {}
    for e in sheet.experts:
        if weighting is None:
            weights[e] = Fraction(1)
        elif e not in sheet.profiles:
            raise DataError(f"no profile for expert {e!r}")
        else:
            weights[e] = expert_weight(sheet.profiles[e], weighting, difficulty_transform)
    out = {}
    for obs in sheet.observations:
        votes = [(labels[obs], weights[e]) for e, labels in per_expert.items() if obs in labels]
        out[obs] = tally(votes, obs)
    return out


@dataclass(frozen=True)
class Accuracy:
    correct: int
    decided: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.decided

    @property
    def coverage(self) -> float:
        return self.decided / self.total


def _label_lookup(labels: CutoffLabels | Mapping[Hashable, int]) -> Mapping[Hashable, int]:
    return labels.as_dict() if isinstance(labels, CutoffLabels) else labels


def _score(decisions: Mapping[Hashable, int], truth: Mapping[Hashable, int]) -> Accuracy:
    correct = decided = 0
    for obs, label in decisions.items():
        if obs not in truth:
            raise DataError(f"observation {obs!r} has no method label")
        if label == UNDECIDED:
            continue
        decided += 1
        correct += int(label == truth[obs])
    return Accuracy(correct, decided, len(decisions))


def ensemble_accuracy(
    votes: Mapping[Hashable, VoteResult],
    labels: CutoffLabels | Mapping[Hashable, int],
) -> Accuracy:
    """Agreement with method labels over the observations the ensemble decided."""
    result = _score({k: v.label for k, v in votes.items()}, _label_lookup(labels))
    if result.decided == 0:
        raise DataError("ensemble decided no observation; accuracy undefined")
    return result


def accuracy_gain(base: float, weighted: float) -> tuple[float, float]:
    """Absolute difference and relative increase (in percent) over ``base``."""
    diff = weighted - base
    return diff, (100.0 * diff / base if base else math.nan)


@dataclass(frozen=True)
class IndividualAccuracy:
    expert_id: Hashable
    method: str
    cutoff: float
    accuracy: Accuracy


def individual_accuracy(
    sheet: ExpertLabelSheet,
    labelings: Sequence[CutoffLabels],
) -> list[IndividualAccuracy]:
    """Accuracy of each expert against each labeling; all-undecided experts are skipped."""
    out = []
    for e in sheet.experts:
        decisions = sheet.expert_labels(e)
        if all(v == UNDECIDED for v in decisions.values()):
            logger.warning("expert %r left every observation undecided; excluded", e)
            continue
        for lab in labelings:
            out.append(IndividualAccuracy(e, lab.method, lab.cutoff, _score(decisions, lab.as_dict())))
    return out


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float(x @ x) * float(y @ y))
    return float(x @ y) / denom if denom else math.nan


@dataclass(frozen=True)
class ExpertSummary:
    """Per-expert consistency and self-assessment with summary statistics."""

    experts: tuple[Hashable, ...]
    consistency: np.ndarray
    difficulty: np.ndarray
    job_relevance: np.ndarray

    def stats(self) -> dict[str, dict[str, float]]:
        cols = {
            "consistency": self.consistency,
            "difficulty": self.difficulty,
            "job_relevance": self.job_relevance,
        }
        out = {}
        for name, v in cols.items():
            out[name] = {
                "mean": float(v.mean()),
                "std": float(v.std(ddof=1)) if v.size > 1 else math.nan,
                "min": float(v.min()),
                "max": float(v.max()),
            }
            out[name].update({f"corr_{other}": _pearson(v, w) for other, w in cols.items()})
        return out


def summarize_experts(sheet: ExpertLabelSheet) -> ExpertSummary:
    experts = tuple(sheet.experts)
    missing = [e for e in experts if e not in sheet.profiles]
    if missing:
        raise DataError(f"no profile for experts {missing}")
    return ExpertSummary(
        experts,
        np.array([consistency(sheet, e) for e in experts]),
        np.array([sheet.profiles[e].difficulty for e in experts], dtype=np.float64),
        np.array([sheet.profiles[e].job_relevance for e in experts], dtype=np.float64),
    )
