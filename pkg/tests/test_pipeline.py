from __future__ import annotations

import csv
import json
from fractions import Fraction

import jsonschema
import numpy as np
import pytest
from PIL import Image

from bgforensics.attacks import AttackChain
from bgforensics.errors import (
    BadParams,
    ConfigInvalid,
    EmptyClass,
    EmptyDataset,
    IoFailure,
    LengthMismatch,
    UnlabeledEntry,
)
from bgforensics.pipeline import features as store
from bgforensics.pipeline.detector import CnnSettings, Detector, SvmSettings, fit_detector
from bgforensics.pipeline.manifest import DatasetManifest, ManifestEntry, build_manifest, synth_dataset
from bgforensics.pipeline.report import REPORT_SCHEMA, emit_report, read_report, render_csv, render_json
from bgforensics.pipeline.scenario import (
    EvalReport,
    ReportRow,
    ScenarioConfig,
    accuracy,
    accuracy_fraction,
    run_scenario,
    select_frames,
)
from bgforensics.pipeline.split import SplitPlan, make_split
from bgforensics.raster import load_image

TINY_CNN = {"conv": [[2, 3], [2, 3], [2, 3], [2, 3]], "dense": [4, 4], "epochs": 1, "fine_tune_epochs": 1,
            "batch_size": 4}
FAST_SVM = {"folds": 2, "C_grid": [1.0], "gamma_scales": [1.0]}


def write_png(path, seed):
    path.parent.mkdir(parents=True, exist_ok=True)
    px = np.random.default_rng(seed).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    Image.fromarray(px).save(path)


@pytest.fixture
def tree(tmp_path):
    root = tmp_path / "data"
    for i in range(3):
        write_png(root / "zoom" / "real" / f"f{i}.png", i)
        write_png(root / "teams" / "virtual" / f"f{i}.png", 10 + i)
    return root


# -- manifests ---------------------------------------------------------------


def test_build_manifest_labels_and_tags(tree, tmp_path):
    m = build_manifest([tree], base_dir=tmp_path)
    assert len(m) == 6
    assert [e.label for e in m.entries] == ["virtual"] * 3 + ["real"] * 3
    assert [e.path for e in m.entries] == sorted(e.path for e in m.entries)
    assert {e.tags["software"] for e in m.entries if e.label == "real"} == {"zoom"}
    assert {e.tags["software"] for e in m.entries if e.label == "virtual"} == {"teams"}
    assert all(e.tags["lighting"] == "unknown" for e in m.entries)
    assert m.resolve(m.entries[0]).is_file()


def test_build_manifest_custom_rules(tree, tmp_path):
    m = build_manifest([tree], label_rules={"zoom": "real", "teams": "virtual"},
                       tag_rules={"camera": {"f0": "webcam"}}, base_dir=tmp_path)
    assert sum(e.tags["camera"] == "webcam" for e in m.entries) == 2


def test_build_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_manifest([tmp_path / "missing"])
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyDataset):
        build_manifest([tmp_path / "empty"])
    write_png(tmp_path / "other" / "a.png", 0)
    with pytest.raises(UnlabeledEntry):
        build_manifest([tmp_path / "other"])


def test_manifest_round_trip(tree, tmp_path):
    m = build_manifest([tree], base_dir=tmp_path)
    path = tmp_path / "m.jsonl"
    m.write(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    assert set(json.loads(lines[0])) == {"path", "label", "tags"}
    back = DatasetManifest.read(path)
    assert [e.to_dict() for e in back.entries] == [e.to_dict() for e in m.entries]
    assert back.resolve(back.entries[0]).is_file()


def test_manifest_rejects_bad_input(tmp_path):
    with pytest.raises(BadParams):
        DatasetManifest([ManifestEntry("a.png", "real"), ManifestEntry("a.png", "virtual")])
    with pytest.raises(UnlabeledEntry):
        ManifestEntry("a.png", "fake")
    empty = tmp_path / "e.jsonl"
    empty.write_text("\n")
    with pytest.raises(EmptyDataset):
        DatasetManifest.read(empty)
    bad = tmp_path / "b.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(BadParams):
        DatasetManifest.read(bad)


def test_manifest_matching():
    m = DatasetManifest([
        ManifestEntry("a", "real", {"software": "zoom"}),
        ManifestEntry("b", "virtual", {"software": "teams"}),
        ManifestEntry("c", "virtual", {"software": "gmeet"}),
    ])
    assert m.matching(None) == [0, 1, 2]
    assert m.matching({"software": "zoom"}) == [0]
    assert m.matching({"software": ["teams", "gmeet"]}) == [1, 2]


# -- synthetic set ------------------------------------------------------------


def test_synth_counts_and_determinism(tmp_path):
    a = synth_dataset(3, (40, 24), seed=5, out_dir=tmp_path / "a")
    b = synth_dataset(3, (40, 24), seed=5, out_dir=tmp_path / "b")
    c = synth_dataset(3, (40, 24), seed=6, out_dir=tmp_path / "c")
    assert len(a) == 6
    assert sum(e.label == "virtual" for e in a.entries) == 3
    assert (tmp_path / "a" / "manifest.jsonl").is_file()
    for ea, eb in zip(a.entries, b.entries):
        assert a.resolve(ea).read_bytes() == b.resolve(eb).read_bytes()
    assert any(a.resolve(x).read_bytes() != c.resolve(y).read_bytes() for x, y in zip(a.entries, c.entries))
    img = load_image(a.resolve(a.entries[0]))
    assert (img.width, img.height) == (40, 24)


def test_desk_scale_synth(desk_dataset):
    manifest, out = desk_dataset
    assert len(manifest) == 400
    assert sum(manifest.targets()) == 200
    assert len(list(out.rglob("*.png"))) == 400
    img = load_image(manifest.resolve(manifest.entries[-1]))
    assert (img.width, img.height) == (320, 180)


@pytest.mark.parametrize("args", [(0, (32, 32)), (-1, (32, 32)), (2, (8, 32))])
def test_synth_bad_params(tmp_path, args):
    with pytest.raises(BadParams):
        synth_dataset(*args, seed=0, out_dir=tmp_path)


# -- splits ---------------------------------------------------------------


def test_split_properties():
    labels = [0] * 23 + [1] * 17
    plan = make_split(labels, seed=3)
    parts = [set(plan.train), set(plan.val), set(plan.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert set().union(*parts) == set(range(40))
    for part in parts:
        assert {labels[i] for i in part} == {0, 1}
    assert make_split(labels, seed=3) == plan
    assert make_split(labels, seed=4) != plan


def test_split_small_classes_keep_both_labels():
    plan = make_split([0, 0, 0, 1, 1, 1], seed=0)
    for part in (plan.train, plan.val, plan.test):
        assert sorted({[0, 0, 0, 1, 1, 1][i] for i in part}) == [0, 1]


def test_split_round_trip(tmp_path):
    plan = make_split([0, 1] * 10, (0.6, 0.2, 0.2), seed=1)
    path = tmp_path / "s.json"
    plan.write(path)
    assert SplitPlan.from_dict(json.loads(path.read_text())) == plan


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.8, 0.3, 0.1), (1.2, -0.1, -0.1)])
def test_split_bad_fractions(fractions):
    with pytest.raises(BadParams):
        make_split([0, 1, 0, 1], fractions)


def test_split_check_detects_overlap():
    with pytest.raises(BadParams):
        SplitPlan((0, 1), (1,), (2,)).check()


# -- features ---------------------------------------------------------------


def test_featurize_tensor_store(small_dataset, tmp_path):
    manifest, _ = small_dataset
    sub = DatasetManifest(manifest.entries[:3] + manifest.entries[-3:], manifest.base_dir)
    feats = store.featurize(sub, "six_comat", out=tmp_path / "t", threads=2)
    assert len(feats) == 6 and feats[0].shape == (256, 256, 6)
    files = sorted((tmp_path / "t").glob("*.cmt"))
    assert len(files) == 6
    index, tensors = store.read_tensor_store(tmp_path / "t")
    assert [e["id"] for e in index["entries"]] == [e.path for e in sub.entries]
    assert np.array_equal(tensors[0].data, feats[0].astype(np.float64))


def test_featurize_csv_store(small_dataset, tmp_path):
    manifest, _ = small_dataset
    sub = DatasetManifest(manifest.entries[:3] + manifest.entries[-3:], manifest.base_dir)
    feats = store.featurize(sub, "crspam", out=tmp_path / "f.csv")
    with open(tmp_path / "f.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["id", "label", "f0"] and rows[0][-1] == "f1371"
    assert len(rows) == 7 and all(len(r) == 1374 for r in rows)
    ids, labels, X = store.read_csv_store(tmp_path / "f.csv")
    assert labels == [e.label for e in sub.entries]
    assert np.array_equal(X, np.array(feats))
    store.featurize(sub, "crspam", out=tmp_path / "dirstore")
    assert (tmp_path / "dirstore" / "features.csv").is_file()
    assert (tmp_path / "dirstore" / "index.json").is_file()


def test_featurize_attack_changes_features(small_dataset):
    manifest, _ = small_dataset
    sub = DatasetManifest(manifest.entries[:2], manifest.base_dir)
    clean = store.featurize(sub, "crspam")
    attacked = store.featurize(sub, "crspam", attack='{"kind":"median","k":3}')
    assert not np.array_equal(clean[0], attacked[0])
    # thread count never changes results
    assert all(np.array_equal(a, b) for a, b in zip(clean, store.featurize(sub, "crspam", threads=3)))


def test_featurize_error_names_frame(tmp_path):
    bad = tmp_path / "real" / "x.png"
    bad.parent.mkdir()
    bad.write_bytes(b"garbage")
    m = DatasetManifest([ManifestEntry("real/x.png", "real")], tmp_path)
    with pytest.raises(Exception) as info:
        store.featurize(m, "crspam")
    assert "x.png" in str(info.value)


def test_unknown_scheme():
    with pytest.raises(BadParams):
        store.extract(None, "lbp")


# -- metrics and reports ------------------------------------------------------


def test_accuracy():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([1, 0, 0, 1], [1, 1, 0, 0]) == 0.5
    assert accuracy_fraction([1, 1, 0], [1, 1, 1]) == Fraction(2, 3)
    with pytest.raises(LengthMismatch):
        accuracy([1], [1, 0])
    with pytest.raises(EmptyDataset):
        accuracy([], [])


def one_row_report():
    return EvalReport("s1", [ReportRow("s1", "clean", 3, 2)], {"k": 1}, 7)


def test_report_csv():
    text = render_csv(one_row_report())
    assert text.splitlines() == ["scenario,attack,n,accuracy", f"s1,clean,3,{2 / 3!r}"]


def test_report_json_schema(tmp_path):
    report = one_row_report()
    doc = json.loads(render_json(report))
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["schema"] == "report_v1"
    assert "timestamps" not in doc
    path = tmp_path / "r.json"
    emit_report(report, path, "json")
    back = read_report(path)
    assert back.to_dict() == report.to_dict()
    assert back.rows[0].accuracy == 2 / 3


def test_report_errors(tmp_path):
    with pytest.raises(IoFailure):
        emit_report(one_row_report(), tmp_path / "no" / "such" / "r.json")
    with pytest.raises(BadParams):
        emit_report(one_row_report(), tmp_path / "r.x", "xml")
    other = tmp_path / "o.json"
    other.write_text('{"schema": "v0"}')
    with pytest.raises(BadParams):
        read_report(other)


# -- detectors and scenarios -------------------------------------------------


def test_scenario_config_validation(tmp_path):
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(regime="aware")
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(feature_scheme="six_comat_svm")
    with pytest.raises(ConfigInvalid):
        ScenarioConfig.from_dict({"name": "x", "colour": "red"})
    cfg = ScenarioConfig(attack_matrix=[{"kind": "median", "k": 3}], cnn=TINY_CNN, manifest="m.jsonl")
    again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.load(path).manifest == str(tmp_path / "m.jsonl")


def test_select_frames_tag_filters():
    entries = [ManifestEntry(f"{lab}{i}", lab, {"software": sw})
               for i in range(6) for lab, sw in (("real", "zoom"), ("virtual", "teams"))]
    m = DatasetManifest(entries)
    cfg = ScenarioConfig(test_source_tags={"software": "teams"})
    _, train_idx, test_idx = select_frames(cfg, m)
    assert all(m.entries[i].tags["software"] == "teams" for i in test_idx)
    assert not set(train_idx) & set(test_idx)
    with pytest.raises(EmptyClass):
        select_frames(ScenarioConfig(train_source_tags={"software": "zoom"}), m)


def test_scenario_rows_match_matrix(small_dataset):
    manifest, _ = small_dataset
    matrix = [[{"kind": "median", "k": 3}, {"kind": "jpeg", "qf": q}] for q in (95, 90)]
    cfg = ScenarioConfig(name="tiny", attack_matrix=matrix, cnn=TINY_CNN)
    report = run_scenario(cfg, manifest)
    assert [r.attack for r in report.rows] == ["clean", "median(k=3)+jpeg(qf=95)", "median(k=3)+jpeg(qf=90)"]
    for r in report.rows:
        assert r.n == report.split["n_test"]
        assert r.accuracy == r.correct / r.n
    jsonschema.validate(report.to_dict(), REPORT_SCHEMA)
    empty = run_scenario(ScenarioConfig(name="bare", cnn=TINY_CNN), manifest)
    assert [r.attack for r in empty.rows] == ["clean"]


def test_scenario_reproducible(small_dataset, tmp_path):
    manifest, _ = small_dataset
    cfg = ScenarioConfig(name="rep", feature_scheme="crspam_cnn", attack_matrix=[{"kind": "gamma", "gamma": 0.6}],
                         cnn=TINY_CNN)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    emit_report(run_scenario(cfg, manifest), a)
    emit_report(run_scenario(cfg, manifest), b)
    assert a.read_bytes() == b.read_bytes()


def test_aware_scenario_fine_tunes(small_dataset):
    manifest, _ = small_dataset
    base = ScenarioConfig(name="u", cnn=TINY_CNN)
    unaware = run_scenario(base, manifest)
    aware_cfg = ScenarioConfig(name="a", regime="aware", cnn=TINY_CNN,
                               attack_matrix=[[{"kind": "median", "k": 3}, {"kind": "jpeg", "qf": 90}]])
    aware = run_scenario(aware_cfg, manifest, pretrained=unaware.detector)
    assert "pretrain" in aware.training and "fine_tune" in aware.training
    assert aware.training["pretrain"] == unaware.training
    assert len(aware.rows) == 2


def test_svm_detector_scenario(small_dataset, tmp_path):
    manifest, _ = small_dataset
    cfg = ScenarioConfig(name="svm", feature_scheme="crspam_svm", svm=FAST_SVM,
                         attack_matrix=[{"kind": "jpeg", "qf": 80}])
    report = run_scenario(cfg, manifest)
    assert len(report.rows) == 2
    assert {"C", "gamma", "cv_accuracy", "support_vectors"} <= set(report.training)
    report.detector.save(tmp_path / "det")
    loaded = Detector.load(tmp_path / "det")
    feats = store.featurize(manifest, "crspam")
    assert np.array_equal(loaded.predict(feats), report.detector.predict(feats))


def test_cnn_detector_save_load(tmp_path):
    rng = np.random.default_rng(0)
    feats = [rng.random(1372) for _ in range(6)]
    det = fit_detector("crspam_cnn", feats, [0, 1] * 3, 0, CnnSettings(**TINY_CNN), SvmSettings())
    det.save(tmp_path / "cnn")
    back = Detector.load(tmp_path / "cnn")
    assert back.kind == "crspam_cnn" and back.input_transform == "none"
    assert np.array_equal(back.predict(feats), det.predict(feats))


def test_mismatch_is_tag_filtering(small_dataset):
    manifest, _ = small_dataset
    cfg = ScenarioConfig(name="mm", cnn=TINY_CNN, train_source_tags={"software": "synthetic"},
                         test_source_tags={"software": "zoom"})
    with pytest.raises(EmptyDataset):
        run_scenario(cfg, manifest)


def test_attack_descriptor_in_rows():
    chain = AttackChain.parse([{"kind": "resize", "scale": 0.8}, {"kind": "jpeg", "qf": 85}])
    assert chain.describe() == "resize(scale=0.8)+jpeg(qf=85)"


def test_shipped_configs_load():
    from pathlib import Path

    for path in (Path(__file__).parents[1] / "configs").glob("*.json"):
        cfg = ScenarioConfig.load(path)
        assert cfg.attack_matrix and cfg.manifest.endswith("manifest.jsonl")
