"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Hashable, Sequence, TextIO

import numpy as np

from granular import __version__
from granular.data import fit_standardizer, load_csv, standardize, write_csv
from granular.errors import ConfigError, DataError, GranularError
from granular.experts import (
    ExpertLabelSheet,
    ExpertProfile,
    LabelRecord,
    consistency,
    expert_spearman_matrix,
    inject_duplicates,
    load_sheet,
    summarize_experts,
    write_sheet,
)
from granular.perturbation import inject_synthetic, load_specs, make_specs, non_outlying_ids, save_specs
from granular.pipeline import (
    METHODS,
    RunConfig,
    Report,
    SyntheticSettings,
    _experts_section,
    _labels_section,
    _ranking_section,
    dumps,
    emit_report,
    run_pipeline,
    score_methods,
)
from granular.ranking import (
    CutoffLabels,
    correlation_matrix,
    rank,
    select_validation_subset,
    top_percent_labels,
)

logger = logging.getLogger("granular")


def _cutoffs(text: str) -> list[float]:
    try:
        return [float(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad cutoff list {text!r}") from None


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--seed", type=_seed, help="random seed (u64)")
    p.add_argument("--method", choices=[*METHODS, "all"], help="detector(s) to run")
    p.add_argument("--cutoffs", type=_cutoffs, help="comma-separated top-percent cutoffs, e.g. 5,10,15")
    p.add_argument("--out", help="output directory")
    p.add_argument("--id-column", help="CSV column holding row ids")
    p.add_argument("-v", "--verbose", action="store_true")


def _method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, help="LOF neighbours")
    p.add_argument("--trees", type=int, help="isolation trees")
    p.add_argument("--subsample", type=int, help="isolation subsample size")
    p.add_argument("--encoding-dim", type=int, help="autoencoder bottleneck width")
    p.add_argument("--hidden-layers", type=int, help="autoencoder hidden layer count")
    p.add_argument("--epochs", type=int, help="autoencoder training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="granular", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a dataset with the selected detectors")
    p.add_argument("data", nargs="?")
    _common(p)
    _method_flags(p)

    p = sub.add_parser("rank", help="rank an id,score CSV and emit top-percent labels")
    p.add_argument("scores")
    _common(p)

    p = sub.add_parser("inject", help="append synthetic perturbations to a dataset")
    p.add_argument("data", nargs="?")
    p.add_argument("--specs", help="perturbation spec JSON; generated when omitted")
    _common(p)
    _method_flags(p)

    p = sub.add_parser("evaluate", help="detection and feedback accuracy against ground truth")
    p.add_argument("data", nargs="?")
    p.add_argument("--post", help="post-fix dataset; DATA is the pre-fix version")
    p.add_argument("--truth", help="ground-truth JSON for DATA")
    p.add_argument("--specs", help="perturbation spec JSON to inject and evaluate")
    p.add_argument("--synthetic", action="store_true", help="generate and evaluate synthetic perturbations")
    _common(p)
    _method_flags(p)

    p = sub.add_parser("collect-labels", help="blind, one-at-a-time expert labeling session")
    p.add_argument("data", nargs="?")
    p.add_argument("--sheet", required=True, help="label sheet CSV to create or extend")
    p.add_argument("--expert", required=True, help="expert id")
    p.add_argument("--items", help="CSV with item_id,observation_id,dup_group (from report)")
    p.add_argument("--size", type=int, default=40, help="subset size when --items is omitted")
    p.add_argument("--duplicates", type=int, default=5, help="duplicates when --items is omitted")
    _common(p)
    _method_flags(p)

    p = sub.add_parser("vote", help="majority-vote ensembles against method labels")
    p.add_argument("--sheet", required=True)
    p.add_argument("--labels", required=True, help="labels.csv from score/rank")
    p.add_argument("--columns", help="dataset column names, comma separated (for usage tallies)")
    p.add_argument("--difficulty-transform", choices=["reciprocal", "reversed"], default="reciprocal")
    _common(p)

    p = sub.add_parser("consistency", help="expert consistency and self-assessment summary")
    p.add_argument("--sheet", required=True)
    _common(p)

    p = sub.add_parser("correlate", help="phi matrix of labelings or Spearman matrix of experts")
    p.add_argument("--labels", help="labels.csv")
    p.add_argument("--sheet", help="expert label sheet")
    _common(p)

    p = sub.add_parser("report", help="run the full pipeline described by --config")
    p.add_argument("data", nargs="?")
    _common(p)
    _method_flags(p)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "data", None):
        cfg.data = args.data
    if args.id_column:
        cfg.id_column = args.id_column
    if args.seed is not None:
        cfg.seed = args.seed
    if args.method:
        cfg.methods = list(METHODS) if args.method == "all" else [args.method]
    if args.cutoffs:
        cfg.cutoffs = args.cutoffs
    if args.out:
        cfg.out = args.out
    if getattr(args, "k", None) is not None:
        cfg.lof.k = args.k
    if getattr(args, "trees", None) is not None:
        cfg.iforest.trees = args.trees
    if getattr(args, "subsample", None) is not None:
        cfg.iforest.subsample = args.subsample
    if getattr(args, "encoding_dim", None) is not None:
        cfg.autoencoder.encoding_dim = args.encoding_dim
    if getattr(args, "hidden_layers", None) is not None:
        cfg.autoencoder.hidden_layers = args.hidden_layers
    if getattr(args, "epochs", None) is not None:
        cfg.autoencoder.epochs = args.epochs
    # Re-run validation after overrides.
    return RunConfig.from_dict({f: getattr(cfg, f) for f in cfg.__dataclass_fields__})


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out or "granular-out")


def _finish(cfg: RunConfig, report, out: TextIO) -> int:
    written = emit_report(report, _out_dir(cfg))
    for path in written:
        print(path, file=out)
    return 0


def cmd_score(args, out: TextIO) -> int:
    cfg = _config(args)
    cfg.post_fix = cfg.truth = cfg.perturbations = cfg.labels = None
    cfg.synthetic = cfg.subset = None
    return _finish(cfg, run_pipeline(cfg), out)


def cmd_report(args, out: TextIO) -> int:
    cfg = _config(args)
    return _finish(cfg, run_pipeline(cfg), out)


def cmd_evaluate(args, out: TextIO) -> int:
    cfg = _config(args)
    if args.post:
        cfg.post_fix = args.post
    if args.truth:
        cfg.truth = args.truth
    if args.specs:
        cfg.perturbations = args.specs
    if args.synthetic and cfg.synthetic is None:
        cfg.synthetic = SyntheticSettings()
    if not (cfg.post_fix or cfg.truth or cfg.perturbations or cfg.synthetic):
        raise ConfigError("evaluate needs --post, --truth, --specs or --synthetic")
    return _finish(cfg, run_pipeline(cfg), out)


def _read_scores(path: str) -> tuple[list[Hashable], list[float]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    ids, scores = [], []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"id", "score"} <= set(reader.fieldnames or ()):
            raise DataError(f"{p}: need columns id,score")
        for line, row in enumerate(reader, start=2):
            try:
                scores.append(float(row["score"]))
            except ValueError:
                raise DataError(f"{p}:{line}: bad score {row['score']!r}") from None
            ids.append(int(row["id"]) if row["id"].lstrip("-").isdigit() else row["id"])
    return ids, scores


def cmd_rank(args, out: TextIO) -> int:
    cfg = _config(args)
    method = args.method if args.method and args.method != "all" else "ae"
    ids, scores = _read_scores(args.scores)
    ranking = rank(scores, method, ids)
    labelings = [top_percent_labels(ranking, c) for c in cfg.cutoffs]
    names, corr = correlation_matrix(labelings)
    report = Report(
        {"tool": "granular", "version": __version__, "seed": cfg.seed},
        {
            "rankings": {method: _ranking_section(ranking)},
            "labels": _labels_section(labelings),
            "correlations": {"statistic": "phi", "names": names, "matrix": corr.tolist()},
        },
    )
    return _finish(cfg, report, out)


def cmd_inject(args, out: TextIO) -> int:
    cfg = _config(args)
    if cfg.data is None:
        raise ConfigError("no dataset given")
    raw = load_csv(cfg.data, cfg.id_column)
    params = fit_standardizer(raw)
    data = standardize(raw, params)
    scores = score_methods(data, cfg, METHODS)
    if args.specs:
        specs = load_specs(args.specs)
    else:
        syn = cfg.synthetic or SyntheticSettings()
        specs = make_specs(
            data,
            non_outlying_ids(scores.rankings.values()),
            syn.mix,
            syn.magnitudes,
            cfg.seed if syn.seed is None else syn.seed,
        )
    augmented, truth = inject_synthetic(raw, specs, scores.rankings.values(), params)
    target = _out_dir(cfg)
    target.mkdir(parents=True, exist_ok=True)
    write_csv(augmented, target / "augmented.csv", cfg.id_column or "id")
    truth.save(target / "ground_truth.json")
    save_specs(specs, target / "specs.json")
    for name in ("augmented.csv", "ground_truth.json", "specs.json"):
        print(target / name, file=out)
    return 0


def _read_labels(path: str) -> list[CutoffLabels]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise DataError(f"{p}: expected a labels.csv with an id column first")
    header, body = rows[0], rows[1:]
    ids = [int(r[0]) if r[0].lstrip("-").isdigit() else r[0] for r in body]
    out = []
    for j, name in enumerate(header[1:], start=1):
        method, _, cutoff = name.rpartition("_")
        try:
            out.append(
                CutoffLabels(method, float(cutoff), tuple(ids), np.array([int(r[j]) for r in body]))
            )
        except ValueError:
            raise DataError(f"{p}: bad labels column {name!r}") from None
    return out


def _sheet_columns(sheet: ExpertLabelSheet, columns: str | None) -> list[str]:
    if columns:
        return [c.strip() for c in columns.split(",")]
    return sorted({d for r in sheet.records for d in r.dims_used})


def cmd_vote(args, out: TextIO) -> int:
    cfg = _config(args)
    sheet = load_sheet(args.sheet)
    labelings = _read_labels(args.labels)
    section = _experts_section(sheet, _sheet_columns(sheet, args.columns), labelings, args.difficulty_transform)
    return _emit_section(cfg, "experts", section, out)


def _emit_section(cfg: RunConfig, name: str, section, out: TextIO) -> int:
    report = Report({"tool": "granular", "version": __version__, "seed": cfg.seed}, {name: section})
    if cfg.out:
        return _finish(cfg, report, out)
    out.write(dumps(section))
    return 0


def cmd_consistency(args, out: TextIO) -> int:
    cfg = _config(args)
    sheet = load_sheet(args.sheet)
    if sheet.profiles and all(e in sheet.profiles for e in sheet.experts):
        summary = summarize_experts(sheet)
        section = {
            "experts": [
                {"expert_id": e, "consistency": float(c), "difficulty": float(d), "job_relevance": float(j)}
                for e, c, d, j in zip(summary.experts, summary.consistency, summary.difficulty, summary.job_relevance)
            ],
            "stats": summary.stats(),
        }
    else:
        section = {"experts": [{"expert_id": e, "consistency": consistency(sheet, e)} for e in sheet.experts]}
    return _emit_section(cfg, "consistency", section, out)


def cmd_correlate(args, out: TextIO) -> int:
    cfg = _config(args)
    if bool(args.labels) == bool(args.sheet):
        raise ConfigError("give exactly one of --labels or --sheet")
    if args.labels:
        names, corr = correlation_matrix(_read_labels(args.labels))
        section = {"statistic": "phi", "names": names, "matrix": corr.tolist()}
        return _emit_section(cfg, "correlations", section, out)
    experts, rho = expert_spearman_matrix(load_sheet(args.sheet))
    return _emit_section(cfg, "spearman", {"experts": experts, "matrix": rho.tolist()}, out)


def _ask(prompt: str, valid, stdin: TextIO, out: TextIO):
    while True:
        out.write(prompt)
        out.flush()
        line = stdin.readline()
        if not line:
            raise DataError("labeling session ended before completion")
        try:
            return valid(line.strip())
        except ValueError as exc:
            out.write(f"  {exc}\n")


def _read_items(path: str) -> list[tuple[int, Hashable, int | None]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            obs = row["observation_id"]
            dup = (row.get("dup_group") or "").strip()
            out.append((int(row["item_id"]), int(obs) if obs.lstrip("-").isdigit() else obs, int(dup) if dup else None))
    return out


def cmd_collect_labels(args, out: TextIO, stdin: TextIO | None = None) -> int:
    """Show each observation's raw values only (no scores), one at a time."""
    stdin = stdin or sys.stdin
    cfg = _config(args)
    if cfg.data is None:
        raise ConfigError("no dataset given")
    raw = load_csv(cfg.data, cfg.id_column)
    if args.items:
        items = _read_items(args.items)
    else:
        data = standardize(raw, fit_standardizer(raw))
        scores = score_methods(data, cfg, METHODS)
        ids = select_validation_subset(list(scores.rankings.values()), args.size, cfg.seed)
        items = [(p.item_id, p.observation_id, p.dup_group) for p in inject_duplicates(ids, args.duplicates, cfg.seed)]
    where = raw.row_index()
    expert = int(args.expert) if args.expert.isdigit() else args.expert

    def label(text: str) -> int:
        v = {"0": 0, "n": 0, "normal": 0, "1": 1, "o": 1, "outlier": 1, "2": 2, "u": 2, "na": 2, "undecided": 2}.get(text.lower())
        if v is None:
            raise ValueError("answer 0 (normal), 1 (outlier) or u (undecided)")
        return v

    def dims(text: str) -> tuple[str, ...]:
        chosen = tuple(d.strip() for d in text.replace(",", ";").split(";") if d.strip())
        unknown = [d for d in chosen if d not in raw.columns]
        if unknown:
            raise ValueError(f"unknown dimensions {unknown}; choose from {', '.join(raw.columns)}")
        return chosen

    def score_1_10(text: str) -> int:
        v = int(text)
        if not 1 <= v <= 10:
            raise ValueError("enter a number from 1 to 10")
        return v

    records = []
    width = max(len(c) for c in raw.columns)
    for n_item, (item_id, obs, dup) in enumerate(items, start=1):
        if obs not in where:
            raise DataError(f"observation {obs!r} not in dataset")
        out.write(f"\nItem {n_item} of {len(items)}\n")
        for c, v in zip(raw.columns, raw.values[where[obs]]):
            out.write(f"  {c:<{width}}  {v:g}\n")
        lab = _ask("Label [0 normal / 1 outlier / u undecided]: ", label, stdin, out)
        used = _ask("Dimensions used (separate with ;): ", dims, stdin, out)
        records.append(LabelRecord(expert, item_id, obs, lab, dup, used))
    relevance = _ask("Relevance of your experience to this task (1-10): ", score_1_10, stdin, out)
    difficulty = _ask("Difficulty of this task (1-10): ", score_1_10, stdin, out)

    sheet_path = Path(args.sheet)
    previous = load_sheet(sheet_path) if sheet_path.is_file() else ExpertLabelSheet(())
    if expert in previous.experts:
        raise DataError(f"sheet already holds labels from expert {expert!r}")
    profiles = dict(previous.profiles)
    profiles[expert] = ExpertProfile(expert, relevance, difficulty)
    write_sheet(ExpertLabelSheet(previous.records + tuple(records), profiles), sheet_path)
    out.write(f"\nSaved {len(records)} labels to {sheet_path}\n")
    return 0


COMMANDS = {
    "score": cmd_score,
    "rank": cmd_rank,
    "inject": cmd_inject,
    "evaluate": cmd_evaluate,
    "collect-labels": cmd_collect_labels,
    "vote": cmd_vote,
    "consistency": cmd_consistency,
    "correlate": cmd_correlate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args, out)
    except GranularError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
