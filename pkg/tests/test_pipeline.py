from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from granular.data import Dataset, write_csv
from granular.errors import ConfigError, DataError
from granular.experts import ExpertLabelSheet, ExpertProfile, LabelRecord, write_sheet
from granular.pipeline import RunConfig, emit_report, run_pipeline

FAST = {"autoencoder": {"epochs": 5}, "iforest": {"trees": 20}}


def config(path, **extra):
    raw = {"data": str(path), "id_column": "id", **FAST}
    raw.update(extra)
    return RunConfig.from_dict(raw)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"dat": "x.csv"})
    with pytest.raises(ConfigError, match="autoencoder"):
        RunConfig.from_dict({"autoencoder": {"epoch": 3}})


@pytest.mark.parametrize(
    "raw",
    [{"methods": ["svm"]}, {"methods": []}, {"cutoffs": [0]}, {"seed": -1}, {"difficulty_transform": "log"}],
)
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_load_yaml(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("data: d.csv\nseed: 4\nlof: {k: 7}\ncutoffs: [5, 20]\n", encoding="utf-8")
    cfg = RunConfig.load(path)
    assert (cfg.seed, cfg.lof.k, cfg.cutoffs) == (4, 7, [5.0, 20.0])
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert RunConfig.from_dict(cfg.to_dict()).hash() == cfg.hash()
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.yaml")


def test_score_only_run(small_csv):
    path, data = small_csv
    report = run_pipeline(config(path))
    p = report.payload
    assert set(p["rankings"]) == {"ae", "lof", "iforest"}
    for sec in p["rankings"].values():
        assert [r["id"] for r in sec["rows"]] == list(data.ids)
        assert sorted(r["rank"] for r in sec["rows"]) == list(range(1, data.n + 1))
    assert len(p["reconstruction"]["rows"]) == data.n
    assert p["evaluation"]["data_quality"]["status"] == "skipped"
    assert p["evaluation"]["synthetic"]["status"] == "skipped"
    assert p["experts"]["status"] == "skipped"
    assert report.metadata["seed"] == 0
    assert report.metadata["config"]["lof"] == {"k": None}


def test_single_method_skips_reconstruction(small_csv):
    path, _ = small_csv
    p = run_pipeline(config(path, methods=["lof"])).payload
    assert list(p["rankings"]) == ["lof"]
    assert p["reconstruction"]["status"] == "skipped"


def test_data_quality_evaluation(small_csv, tmp_path):
    path, data = small_csv
    values = data.values.copy()
    values[3, 1] += 6.0
    values[40, 4] -= 6.0
    pre = tmp_path / "pre.csv"
    write_csv(data.with_values(values), pre)
    ev = run_pipeline(config(pre, post_fix=str(path))).payload["evaluation"]["data_quality"]
    assert ev["affected"] == 2
    truth = {e["id"]: e["signs"] for e in ev["ground_truth"]["affected"]}
    assert truth == {103: {"x2": 1}, 140: {"x5": -1}}
    assert set(ev["detection"]) == {"ae", "lof", "iforest"}
    assert len(ev["feedback"]["per_observation"]) == 2


def test_synthetic_evaluation(small_csv):
    path, data = small_csv
    p = run_pipeline(config(path, synthetic={})).payload
    syn = p["evaluation"]["synthetic"]
    assert syn["affected"] == 10
    assert [len(s["deltas"]) for s in syn["specs"]] == [1] * 5 + [2] * 3 + [3] * 2
    assert {r["id"] for r in syn["feedback"]["per_observation"]} == set(range(220, 230))
    rates = syn["detection"]["ae"]
    assert rates["5"] <= rates["10"] <= rates["15"]


def test_average_detection_needs_both_experiments(small_csv, tmp_path):
    path, data = small_csv
    values = data.values.copy()
    values[0, 0] += 9.0
    pre = tmp_path / "pre.csv"
    write_csv(data.with_values(values), pre)
    ev = run_pipeline(config(pre, post_fix=str(path), synthetic={})).payload["evaluation"]
    for m, rates in ev["average_detection"].items():
        for c, v in rates.items():
            expected = (ev["data_quality"]["detection"][m][c] + ev["synthetic"]["detection"][m][c]) / 2
            assert v == pytest.approx(expected)


def _sheet(tmp_path, ids):
    records = []
    rng = np.random.default_rng(0)
    for e in ("a", "b", "c"):
        for k, obs in enumerate(ids):
            records.append(LabelRecord(e, k, obs, int(rng.integers(0, 3)), None, ("x1",) if k % 2 else ()))
        records.append(LabelRecord(e, len(ids), ids[0], records[-len(ids)].label, 0))
    records = [
        r if r.item_id != 0 else LabelRecord(r.expert_id, 0, r.observation_id, r.label, 0, r.dims_used)
        for r in records
    ]
    profiles = {e: ExpertProfile(e, i + 3, 8 - i) for i, e in enumerate(("a", "b", "c"))}
    path = tmp_path / "sheet.csv"
    write_sheet(ExpertLabelSheet(records, profiles), path)
    return path


def test_expert_section(small_csv, tmp_path):
    path, data = small_csv
    sheet = _sheet(tmp_path, list(data.ids[:20]))
    ex = run_pipeline(config(path, labels=str(sheet))).payload["experts"]
    assert [r["consistency"] for r in ex["summary"]["experts"]] == [1.0, 1.0, 1.0]
    assert len(ex["individual_accuracy"]) == 3 * 3 * 3
    assert len(ex["votes"]) == 20
    assert {r["method"] for r in ex["majority_voting"]} == {"ae", "lof", "iforest"}
    assert ex["dimension_usage"]["used_by_all"] == ["x1"]


def test_subset_section(small_csv):
    path, _ = small_csv
    vs = run_pipeline(config(path, subset={"size": 12, "duplicates": 3})).payload["validation_subset"]
    assert len(vs["selected"]) == 12
    assert len(vs["presented"]) == 15


def test_stage_errors_name_the_stage(tmp_path):
    with pytest.raises(DataError, match=r"^\[load\]"):
        run_pipeline(RunConfig.from_dict({"data": str(tmp_path / "nope.csv")}))
    with pytest.raises(ConfigError):
        run_pipeline(RunConfig())


def test_emit_report_files(small_csv, tmp_path):
    path, data = small_csv
    report = run_pipeline(config(path, synthetic={}))
    written = {p.name for p in emit_report(report, tmp_path / "out")}
    assert {
        "report.json",
        "payload.json",
        "ranking_ae.csv",
        "ranking_lof.csv",
        "ranking_iforest.csv",
        "deviations.csv",
        "training_loss.csv",
        "labels.csv",
        "correlations.csv",
        "detection.csv",
        "feedback_synthetic.csv",
        "feedback_synthetic_dimensions.csv",
    } <= written
    with open(tmp_path / "out" / "deviations.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["id", "score", "x1", "x2", "x3", "x4", "x5"]
    with open(tmp_path / "out" / "ranking_ae.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["id", "score", "rank", "decile"]


def test_csv_and_json_agree(small_csv, tmp_path):
    path, _ = small_csv
    emit_report(run_pipeline(config(path)), tmp_path)
    payload = json.loads((tmp_path / "payload.json").read_text())
    with open(tmp_path / "deviations.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row, rec in zip(rows, payload["reconstruction"]["rows"]):
        assert int(row["id"]) == rec["id"]
        assert float(row["score"]) == rec["score"]
        assert [float(row[f"x{j}"]) for j in range(1, 6)] == rec["deviations"]


def test_nan_serialized_as_null(small_csv, tmp_path):
    path, _ = small_csv
    # A 99% cutoff on 120 rows labels everything but one; 1% labels one.
    report = run_pipeline(config(path, methods=["lof"], cutoffs=[50]))
    report.payload["correlations"]["matrix"][0][0] = math.nan
    emit_report(report, tmp_path)
    assert json.loads((tmp_path / "payload.json").read_text())["correlations"]["matrix"][0][0] is None


def test_unwritable_output(small_csv, tmp_path):
    path, _ = small_csv
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError, match="cannot write"):
        emit_report(run_pipeline(config(path, methods=["lof"])), blocker / "sub")


def test_payload_is_deterministic(small_csv, tmp_path):
    path, _ = small_csv
    cfg = config(path, synthetic={}, subset={"size": 10, "duplicates": 2})
    emit_report(run_pipeline(cfg), tmp_path / "a")
    emit_report(run_pipeline(cfg), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name == "report.json":
            continue
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_seed_changes_payload(small_csv, tmp_path):
    path, _ = small_csv
    a = run_pipeline(config(path, methods=["iforest"], seed=1)).payload
    b = run_pipeline(config(path, methods=["iforest"], seed=2)).payload
    assert a != b
