"""Run configuration, pipeline orchestration and report emission."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Hashable, Iterator, Mapping, Sequence

import numpy as np
import yaml

from granular import __version__
from granular.autoencoder import NetworkConfig, ReconstructionReport, fit_score
from granular.data import (
    Dataset,
    StandardizationParams,
    fit_standardizer,
    load_csv,
    standardize,
)
from granular.errors import ConfigError, DataError, GranularError, NumericError
from granular.experts import (
    ExpertLabelSheet,
    accuracy_gain,
    dimension_usage,
    ensemble_accuracy,
    expert_spearman_matrix,
    individual_accuracy,
    inject_duplicates,
    load_sheet,
    summarize_experts,
    vote_all,
)
from granular.iforest import ForestConfig, build_forest, iforest_scores
from granular.lof import LofConfig, lof
from granular.perturbation import (
    GroundTruth,
    average_rates,
    detection_rate,
    diff_datasets,
    dimension_rank_accuracy,
    direction_accuracy,
    inject_synthetic,
    load_specs,
    make_specs,
    non_outlying_ids,
    per_dimension_direction,
)
from granular.ranking import (
    DEFAULT_CUTOFFS,
    METHODS,
    CutoffLabels,
    OutlierRanking,
    correlation_matrix,
    rank,
    select_validation_subset,
    top_percent_labels,
)

logger = logging.getLogger(__name__)

WEIGHTINGS = ("job_relevance", "inverse_difficulty")
_OPTIONAL_SECTIONS = ("synthetic", "subset")


def _from_mapping(cls, raw: Mapping | None, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class AutoencoderSettings:
    encoding_dim: int | None = None
    hidden_layers: int | None = None
    learning_rate: float = 9.5e-3
    epochs: int = 500
    batch_size: int = 32
    seed: int | None = None

    def network(self, input_dim: int, seed: int) -> NetworkConfig:
        return NetworkConfig.for_dimension(
            input_dim,
            encoding_dim=self.encoding_dim,
            hidden_layers=self.hidden_layers,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed if self.seed is None else self.seed,
        )


@dataclass
class LofSettings:
    k: int | None = None


@dataclass
class IforestSettings:
    trees: int = 100
    subsample: int | None = None
    seed: int | None = None


@dataclass
class SyntheticSettings:
    mix: list[int] = field(default_factory=lambda: [5, 3, 2])
    magnitudes: list[float] = field(default_factory=lambda: [3.0, 5.0])
    seed: int | None = None


@dataclass
class SubsetSettings:
    size: int = 40
    duplicates: int = 0


@dataclass
class RunConfig:
    """Everything a run needs; ``to_dict`` gives the fully resolved form."""

    data: str | None = None
    id_column: str | None = None
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    cutoffs: list[float] = field(default_factory=lambda: list(DEFAULT_CUTOFFS))
    seed: int = 0
    out: str | None = None
    standardize: bool = True
    post_fix: str | None = None
    diff_tolerance: float = 1e-9
    truth: str | None = None
    perturbations: str | None = None
    synthetic: SyntheticSettings | None = None
    labels: str | None = None
    difficulty_transform: str = "reciprocal"
    subset: SubsetSettings | None = None
    autoencoder: AutoencoderSettings = field(default_factory=AutoencoderSettings)
    lof: LofSettings = field(default_factory=LofSettings)
    iforest: IforestSettings = field(default_factory=IforestSettings)

    _nested = {
        "autoencoder": AutoencoderSettings,
        "lof": LofSettings,
        "iforest": IforestSettings,
        "synthetic": SyntheticSettings,
        "subset": SubsetSettings,
    }

    def __post_init__(self) -> None:
        self.methods = list(self.methods)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        self.cutoffs = [float(c) for c in self.cutoffs]
        if any(not 0 < c < 100 for c in self.cutoffs):
            raise ConfigError(f"cutoffs must lie strictly between 0 and 100, got {self.cutoffs}")
        if self.difficulty_transform not in ("reciprocal", "reversed"):
            raise ConfigError("difficulty_transform must be 'reciprocal' or 'reversed'")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> RunConfig:
        raw = dict(raw)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        for key, sub in cls._nested.items():
            # An explicit null switches optional sections off.
            if key in _OPTIONAL_SECTIONS and key in raw and raw[key] is None:
                continue
            if key in raw and not isinstance(raw[key], sub):
                raw[key] = _from_mapping(sub, raw[key], key)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"no such config file: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Report:
    metadata: dict
    payload: dict

    def section(self, name: str) -> Any:
        return self.payload[name]


def skipped(reason: str) -> dict:
    return {"status": "skipped", "reason": reason}


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except GranularError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        raise NumericError(f"[{name}] {exc}") from exc


@dataclass
class MethodScores:
    rankings: dict[str, OutlierRanking]
    reports: list[ReconstructionReport] | None = None
    training: dict | None = None
    lof_clamped: list[Hashable] = field(default_factory=list)


def score_methods(data: Dataset, config: RunConfig, methods: Sequence[str]) -> MethodScores:
    """Score ``data`` (already standardized) with each method."""
    out = MethodScores({})
    for method in methods:
        with stage(f"score:{method}"):
            if method == "ae":
                net = config.autoencoder.network(data.d, config.seed)
                result, reports = fit_score(data, net)
                out.reports = reports
                out.training = {
                    "layer_widths": net.layer_widths,
                    "epochs_run": len(result.losses),
                    "stopped_early": result.stopped_early,
                    "final_loss": result.final_loss,
                    "losses": list(result.losses),
                }
                scores = np.array([r.score for r in reports])
            elif method == "lof":
                res = lof(data, LofConfig(config.lof.k))
                scores = res.scores
                out.lof_clamped = [data.ids[i] for i in np.flatnonzero(res.clamped)]
                if out.lof_clamped:
                    logger.warning("%d observations hit the lrd clamp", len(out.lof_clamped))
            else:
                seed = config.seed if config.iforest.seed is None else config.iforest.seed
                forest = build_forest(
                    data, ForestConfig(config.iforest.trees, config.iforest.subsample, seed)
                )
                scores = iforest_scores(data, forest)
            out.rankings[method] = rank(scores, method, data.ids)
    return out


def _ranking_section(r: OutlierRanking) -> dict:
    return {
        "method": r.method,
        "rows": [
            {"id": i, "score": float(s), "rank": int(k), "decile": int(d)}
            for i, s, k, d in zip(r.ids, r.scores, r.ranks, r.deciles)
        ],
    }


def _reconstruction_section(columns: Sequence[str], scores: MethodScores) -> dict:
    return {
        "columns": list(columns),
        "sign_convention": "observed - reconstructed (standardized units)",
        "training": scores.training,
        "rows": [
            {"id": r.id, "score": r.score, "deviations": r.deviations.tolist()}
            for r in scores.reports or ()
        ],
    }


def _labels(rankings: Mapping[str, OutlierRanking], cutoffs: Sequence[float]) -> list[CutoffLabels]:
    return [top_percent_labels(rankings[m], c) for m in rankings for c in cutoffs]


def _labels_section(labelings: Sequence[CutoffLabels]) -> dict:
    ids = labelings[0].ids
    return {
        "columns": [lab.name for lab in labelings],
        "rows": [
            {"id": id_, **{lab.name: int(lab.labels[i]) for lab in labelings}}
            for i, id_ in enumerate(ids)
        ],
    }


def _evaluation(
    name: str,
    data: Dataset,
    truth: GroundTruth,
    scores: MethodScores,
    cutoffs: Sequence[float],
) -> dict:
    section: dict[str, Any] = {
        "ground_truth": truth.to_dict(),
        "affected": len(truth),
        "detection": {
            m: {f"{c:g}": rate for c, rate in detection_rate(r, truth, cutoffs).items()}
            for m, r in scores.rankings.items()
        },
    }
    if scores.reports is None:
        section["feedback"] = skipped("autoencoder not among the selected methods")
        return section
    dim_rank = dimension_rank_accuracy(scores.reports, truth, data.columns)
    direction = direction_accuracy(scores.reports, truth, data.columns)
    ranks = scores.rankings["ae"].rank_of()
    section["feedback"] = {
        "per_observation": [
            {
                "id": id_,
                "perturbations": len(truth.dims[id_]),
                "dims": list(truth.dims[id_]),
                "ae_rank": ranks[id_],
                "dimension_rank": dim_rank.per_id[id_],
                "direction": direction.per_id[id_],
            }
            for id_ in truth.ids
        ],
        "per_dimension": [
            {"dimension": c, "observations": cnt, "direction": share}
            for c, (cnt, share) in per_dimension_direction(scores.reports, truth, data.columns).items()
            if cnt
        ],
        "dimension_rank_accuracy": dim_rank.mean,
        "direction_accuracy": direction.mean,
        "zero_deviation_flags": list(direction.flagged),
    }
    logger.info(
        "%s: dimension rank %.3f, direction %.3f over %d observations",
        name,
        dim_rank.mean,
        direction.mean,
        len(truth),
    )
    return section


def _experts_section(
    sheet: ExpertLabelSheet,
    columns: Sequence[str],
    labelings: Sequence[CutoffLabels],
    difficulty_transform: str,
) -> dict:
    section: dict[str, Any] = {}
    if sheet.profiles and all(e in sheet.profiles for e in sheet.experts):
        summary = summarize_experts(sheet)
        section["summary"] = {
            "experts": [
                {
                    "expert_id": e,
                    "consistency": float(c),
                    "difficulty": float(d),
                    "job_relevance": float(j),
                }
                for e, c, d, j in zip(
                    summary.experts, summary.consistency, summary.difficulty, summary.job_relevance
                )
            ],
            "stats": summary.stats(),
        }
    else:
        section["summary"] = skipped("expert profiles missing")
    experts, rho = expert_spearman_matrix(sheet)
    section["spearman"] = {"experts": experts, "matrix": rho.tolist()}
    usage = dimension_usage(sheet, columns)
    section["dimension_usage"] = {
        "experts": list(usage.experts),
        "columns": list(usage.columns),
        "counts": usage.counts.tolist(),
        "experts_using": usage.experts_using(),
        "used_by_all": usage.used_by_all(),
    }
    schemes: dict[str, Any] = {"unweighted": vote_all(sheet)}
    for w in WEIGHTINGS:
        try:
            schemes[w] = vote_all(sheet, w, difficulty_transform)
        except DataError as exc:
            logger.warning("skipping %s voting: %s", w, exc)
    section["votes"] = [
        {
            "observation_id": obs,
            **{
                f"{name}_label": votes[obs].label
                for name, votes in schemes.items()
            },
            **{f"{name}_tie": votes[obs].tie for name, votes in schemes.items()},
        }
        for obs in sheet.observations
    ]
    table = []
    for lab in labelings:
        row: dict[str, Any] = {"method": lab.method, "cutoff": lab.cutoff}
        try:
            base = ensemble_accuracy(schemes["unweighted"], lab)
        except DataError as exc:
            row["error"] = str(exc)
            table.append(row)
            continue
        row["unweighted"] = base.accuracy
        row["unweighted_coverage"] = base.coverage
        for w in WEIGHTINGS:
            if w not in schemes:
                continue
            try:
                acc = ensemble_accuracy(schemes[w], lab)
            except DataError as exc:
                row[f"{w}_error"] = str(exc)
                continue
            diff, pct = accuracy_gain(base.accuracy, acc.accuracy)
            row[w] = acc.accuracy
            row[f"{w}_coverage"] = acc.coverage
            row[f"{w}_difference"] = diff
            row[f"{w}_percent_increase"] = pct
        table.append(row)
    section["majority_voting"] = table
    section["individual_accuracy"] = [
        {
            "expert_id": ia.expert_id,
            "method": ia.method,
            "cutoff": ia.cutoff,
            "accuracy": ia.accuracy.accuracy if ia.accuracy.decided else math.nan,
            "decided": ia.accuracy.decided,
        }
        for ia in individual_accuracy(sheet, labelings)
    ]
    return section


def run_pipeline(config: RunConfig) -> Report:
    started = datetime.now(timezone.utc).isoformat()
    if config.data is None:
        raise ConfigError("no dataset given")
    payload: dict[str, Any] = {}
    with stage("load"):
        raw = load_csv(config.data, config.id_column)
    logger.info("loaded %d x %d from %s", raw.n, raw.d, config.data)

    truth_dq: GroundTruth | None = None
    with stage("ground-truth"):
        if config.post_fix is not None:
            post = load_csv(config.post_fix, config.id_column)
            truth_dq = diff_datasets(raw, post, config.diff_tolerance)
        elif config.truth is not None:
            truth_dq = GroundTruth.load(config.truth)

    with stage("standardize"):
        params = fit_standardizer(raw) if config.standardize else None
        data = standardize(raw, params) if params is not None else raw
    payload["standardization"] = params.to_dict() if params is not None else skipped("disabled")

    want_synthetic = config.synthetic is not None or config.perturbations is not None
    methods = list(METHODS) if want_synthetic else config.methods
    scores = score_methods(data, config, methods)
    selected = {m: scores.rankings[m] for m in config.methods}

    payload["rankings"] = {m: _ranking_section(r) for m, r in selected.items()}
    payload["reconstruction"] = (
        _reconstruction_section(data.columns, scores)
        if "ae" in config.methods
        else skipped("autoencoder not selected")
    )
    if scores.lof_clamped:
        payload["lof_clamped"] = scores.lof_clamped
    with stage("label"):
        labelings = _labels(selected, config.cutoffs)
        names, corr = correlation_matrix(labelings)
    payload["labels"] = _labels_section(labelings)
    payload["correlations"] = {"statistic": "phi", "names": names, "matrix": corr.tolist()}

    evaluation: dict[str, Any] = {}
    if truth_dq is not None:
        with stage("evaluate:data-quality"):
            evaluation["data_quality"] = _evaluation(
                "data quality", data, truth_dq, MethodScores(selected, scores.reports), config.cutoffs
            )
    else:
        evaluation["data_quality"] = skipped("no post-fix dataset or ground truth given")
    if want_synthetic:
        with stage("inject"):
            if config.perturbations is not None:
                specs = load_specs(config.perturbations)
            else:
                syn = config.synthetic
                candidates = non_outlying_ids(scores.rankings.values())
                specs = make_specs(
                    data,
                    candidates,
                    syn.mix,
                    syn.magnitudes,
                    config.seed if syn.seed is None else syn.seed,
                )
            augmented_raw, truth_syn = inject_synthetic(raw, specs, scores.rankings.values(), params)
            aug_params = fit_standardizer(augmented_raw) if config.standardize else None
            augmented = (
                standardize(augmented_raw, aug_params) if aug_params is not None else augmented_raw
            )
        aug_scores = score_methods(augmented, config, config.methods)
        with stage("evaluate:synthetic"):
            evaluation["synthetic"] = _evaluation(
                "synthetic", augmented, truth_syn, aug_scores, config.cutoffs
            )
            evaluation["synthetic"]["specs"] = [s.to_dict() for s in specs]
    else:
        evaluation["synthetic"] = skipped("no perturbations requested")
    dq, syn_ev = evaluation["data_quality"], evaluation["synthetic"]
    if "detection" in dq and "detection" in syn_ev:
        evaluation["average_detection"] = {
            m: {f"{k:g}": v for k, v in average_rates(
                {float(c): r for c, r in dq["detection"][m].items()},
                {float(c): r for c, r in syn_ev["detection"][m].items()},
            ).items()}
            for m in config.methods
        }
    payload["evaluation"] = evaluation

    if config.labels is not None:
        with stage("experts"):
            sheet = load_sheet(config.labels)
            payload["experts"] = _experts_section(
                sheet, data.columns, labelings, config.difficulty_transform
            )
    else:
        payload["experts"] = skipped("no expert label sheet given")

    if config.subset is not None:
        with stage("subset"):
            ids = select_validation_subset(list(scores.rankings.values()), config.subset.size, config.seed)
            presented = inject_duplicates(ids, config.subset.duplicates, config.seed)
        payload["validation_subset"] = {
            "selected": ids,
            "presented": [
                {"item_id": p.item_id, "observation_id": p.observation_id, "dup_group": p.dup_group}
                for p in presented
            ],
        }

    metadata = {
        "tool": "granular",
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "timestamps": {
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
        },
    }
    return Report(metadata, payload)


# ---------------------------------------------------------------------------
# Serialization


def _plain(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars to Python, NaN and inf to null."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return format(f, ".17g") if math.isfinite(f) else ""
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _is_skipped(section: Any) -> bool:
    return isinstance(section, Mapping) and section.get("status") == "skipped"


def emit_report(report: Report, out_dir: str | Path, formats: Sequence[str] = ("json", "csv")) -> list[Path]:
    """Write ``report.json`` (metadata and payload), ``payload.json`` and one CSV per table.

    ``payload.json`` and every CSV are byte-identical across runs with the
    same configuration; only ``report.json`` carries timestamps.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    written: list[Path] = []
    p = report.payload
    if "json" in formats:
        (out / "report.json").write_text(
            dumps({"metadata": report.metadata, "payload": p}), encoding="utf-8"
        )
        (out / "payload.json").write_text(dumps(p), encoding="utf-8")
        written += [out / "report.json", out / "payload.json"]
    if "csv" not in formats:
        return written

    def emit(name: str, header, rows) -> None:
        _write_csv(out / name, header, rows)
        written.append(out / name)

    for method, sec in p.get("rankings", {}).items():
        emit(
            f"ranking_{method}.csv",
            ["id", "score", "rank", "decile"],
            [[r["id"], r["score"], r["rank"], r["decile"]] for r in sec["rows"]],
        )
    rec = p.get("reconstruction")
    if rec is not None and not _is_skipped(rec):
        emit(
            "deviations.csv",
            ["id", "score", *rec["columns"]],
            [[r["id"], r["score"], *r["deviations"]] for r in rec["rows"]],
        )
        if rec.get("training"):
            emit("training_loss.csv", ["epoch", "loss"], list(enumerate(rec["training"]["losses"], 1)))
    if "labels" in p:
        cols = p["labels"]["columns"]
        emit("labels.csv", ["id", *cols], [[r["id"], *(r[c] for c in cols)] for r in p["labels"]["rows"]])
    if "correlations" in p:
        names = p["correlations"]["names"]
        emit(
            "correlations.csv",
            ["", *names],
            [[n, *row] for n, row in zip(names, p["correlations"]["matrix"])],
        )
    ev = p.get("evaluation", {})
    det_rows = []
    for exp in ("data_quality", "synthetic"):
        sec = ev.get(exp)
        if sec is None or _is_skipped(sec):
            continue
        for m, rates in sec["detection"].items():
            det_rows += [[exp, m, c, v] for c, v in rates.items()]
        fb = sec["feedback"]
        if _is_skipped(fb):
            continue
        emit(
            f"feedback_{exp}.csv",
            ["id", "perturbations", "dims", "ae_rank", "dimension_rank", "direction"],
            [
                [r["id"], r["perturbations"], ";".join(r["dims"]), r["ae_rank"], r["dimension_rank"], r["direction"]]
                for r in fb["per_observation"]
            ],
        )
        emit(
            f"feedback_{exp}_dimensions.csv",
            ["dimension", "observations", "direction"],
            [[r["dimension"], r["observations"], r["direction"]] for r in fb["per_dimension"]]
            + [["all", sec["affected"], fb["direction_accuracy"]]],
        )
    for m, rates in ev.get("average_detection", {}).items():
        det_rows += [["average", m, c, v] for c, v in rates.items()]
    if det_rows:
        emit("detection.csv", ["experiment", "method", "cutoff", "rate"], det_rows)
    ex = p.get("experts")
    if ex is not None and not _is_skipped(ex):
        if not _is_skipped(ex["summary"]):
            emit(
                "expert_summary.csv",
                ["expert_id", "consistency", "difficulty", "job_relevance"],
                [[r["expert_id"], r["consistency"], r["difficulty"], r["job_relevance"]] for r in ex["summary"]["experts"]],
            )
        experts = ex["spearman"]["experts"]
        emit("expert_spearman.csv", ["", *experts], [[e, *row] for e, row in zip(experts, ex["spearman"]["matrix"])])
        du = ex["dimension_usage"]
        emit("dimension_usage.csv", ["expert_id", *du["columns"]], [[e, *row] for e, row in zip(du["experts"], du["counts"])])
        if ex["votes"]:
            keys = list(ex["votes"][0])
            emit("votes.csv", keys, [[r[k] for k in keys] for r in ex["votes"]])
        if ex["majority_voting"]:
            keys = sorted({k for r in ex["majority_voting"] for k in r}, key=lambda k: (k not in ("method", "cutoff"), k))
            emit("majority_voting.csv", keys, [[r.get(k) for k in keys] for r in ex["majority_voting"]])
        emit(
            "individual_accuracy.csv",
            ["expert_id", "method", "cutoff", "accuracy", "decided"],
            [[r["expert_id"], r["method"], r["cutoff"], r["accuracy"], r["decided"]] for r in ex["individual_accuracy"]],
        )
    vs = p.get("validation_subset")
    if vs is not None:
        emit(
            "validation_subset.csv",
            ["item_id", "observation_id", "dup_group"],
            [[r["item_id"], r["observation_id"], r["dup_group"]] for r in vs["presented"]],
        )
    return written
