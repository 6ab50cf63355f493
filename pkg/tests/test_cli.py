from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bgforensics import cli
from bgforensics.raster import load_image

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = ["synth", "manifest", "featurize", "attack", "train", "eval", "scenario", "report"]

SMALL_SCENARIO = {
    "name": "cli-small",
    "feature_scheme": "six_comat_cnn",
    "attack_matrix": [[{"kind": "median", "k": 3}], [{"kind": "jpeg", "qf": 90}]],
    "seed": 3,
    "cnn": {"conv": [[2, 3], [2, 3], [2, 3], [2, 3]], "dense": [4, 4], "epochs": 1, "batch_size": 4},
}


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("command", [None] + COMMANDS)
def test_help_snapshot(command, capsys):
    argv = ([command] if command else []) + ["--help"]
    code, out, _ = run(argv, capsys)
    assert code == 0
    assert out == (SNAPSHOTS / f"help_{command or 'main'}.txt").read_text()


def test_version(capsys):
    code, out, _ = run(["--version"], capsys)
    assert code == 0 and out.startswith("bgforensics ")


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nope"],
        ["synth", "--out", "x"],
        ["synth", "--n", "2", "--size", "big", "--out", "x"],
        ["featurize", "--manifest", "m", "--scheme", "hog", "--out", "x"],
        ["train", "--out", "x"],
    ],
)
def test_usage_errors_exit_1(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code == 1
    assert "error" in err


def write_image(path, seed=0, size=(10, 7)):
    px = np.random.default_rng(seed).integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(px).save(path)
    return px


def test_identity_gamma_attack(tmp_path, capsys):
    src = tmp_path / "in.png"
    px = write_image(src)
    for suffix in ("png", "ppm"):
        out = tmp_path / f"out.{suffix}"
        code, _, err = run(["attack", "--in", str(src), "--spec", '{"kind":"gamma","gamma":1.0}',
                            "--out", str(out)], capsys)
        assert code == 0
        assert "seed: 0" in err
        assert np.array_equal(load_image(out).pixels, px)


def test_attack_chain_via_cli(tmp_path, capsys):
    src = tmp_path / "in.png"
    write_image(src, size=(16, 16))
    out = tmp_path / "out.png"
    spec = '[{"kind":"median","k":3},{"kind":"jpeg","qf":90}]'
    assert run(["attack", "--in", str(src), "--spec", spec, "--out", str(out)], capsys)[0] == 0
    assert load_image(out).pixels.shape == (16, 16, 3)


@pytest.mark.parametrize(
    "spec,code",
    [('{"kind":"sepia"}', 2), ('{"kind":"median","k":4}', 2), ("not json", 2)],
)
def test_attack_bad_spec_is_data_error(spec, code, tmp_path, capsys):
    src = tmp_path / "in.png"
    write_image(src)
    got, _, err = run(["attack", "--in", str(src), "--spec", spec, "--out", str(tmp_path / "o.png")], capsys)
    assert got == code
    assert err.strip()


def test_missing_input_is_data_error(tmp_path, capsys):
    code, _, err = run(["attack", "--in", str(tmp_path / "missing.png"), "--spec", '{"kind":"gamma","gamma":1}',
                        "--out", str(tmp_path / "o.png")], capsys)
    assert code == 2
    assert "missing.png" in err


def test_synth_manifest_featurize(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["synth", "--n", "3", "--size", "32x24", "--out", str(data), "--seed", "5"], capsys)[0] == 0
    assert len(list((data / "real").glob("*.png"))) == 3
    manifest = tmp_path / "m.jsonl"
    assert run(["manifest", "--root", str(data), "--out", str(manifest)], capsys)[0] == 0
    lines = [json.loads(line) for line in manifest.read_text().splitlines()]
    assert sorted(e["label"] for e in lines) == ["real"] * 3 + ["virtual"] * 3
    out = tmp_path / "feats.csv"
    code = run(["featurize", "--manifest", str(manifest), "--scheme", "crspam", "--out", str(out),
                "--threads", "2"], capsys)[0]
    assert code == 0
    with out.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 7
    assert len(rows[1]) == len(rows[0]) == 1374


def test_featurize_missing_manifest_is_data_error(tmp_path, capsys):
    code, _, _ = run(["featurize", "--manifest", str(tmp_path / "none.jsonl"), "--scheme", "crspam",
                      "--out", str(tmp_path / "f.csv")], capsys)
    assert code == 2


def scenario_files(small_dataset, tmp_path):
    manifest, root = small_dataset
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps({**SMALL_SCENARIO, "manifest": str(Path(root) / "manifest.jsonl")}))
    return config


def test_scenario_byte_identical(small_dataset, tmp_path, capsys):
    config = scenario_files(small_dataset, tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"report{k}.json"
        code, _, err = run(["scenario", "--config", str(config), "--out", str(out), "--threads", str(k + 1)],
                           capsys)
        assert code == 0
        assert "seed: 3" in err
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["schema"] == "report_v1"
    assert [r["attack"] for r in doc["rows"]] == ["clean", "median(k=3)", "jpeg(qf=90)"]


def test_train_eval_report(small_dataset, tmp_path, capsys):
    config = scenario_files(small_dataset, tmp_path)
    manifest = Path(small_dataset[1]) / "manifest.jsonl"
    model = tmp_path / "model"
    assert run(["train", "--config", str(config), "--out", str(model)], capsys)[0] == 0
    assert (model / "detector.json").exists() and (model / "split.json").exists()
    report = tmp_path / "eval.json"
    code = run(["eval", "--manifest", str(manifest), "--model", str(model), "--split", str(model / "split.json"),
                "--attack", '{"kind":"gamma","gamma":0.6}', "--out", str(report)], capsys)[0]
    assert code == 0
    rows = json.loads(report.read_text())["rows"]
    assert [r["attack"] for r in rows] == ["clean", "gamma(gamma=0.6)"]
    code, out, _ = run(["report", "--in", str(report)], capsys)
    assert code == 0
    assert out.splitlines()[0].startswith("scenario,")
    assert len(out.splitlines()) == 3


def test_bad_config_is_data_error(tmp_path, capsys):
    config = tmp_path / "c.json"
    config.write_text('{"regime": "sideways"}')
    code, _, err = run(["scenario", "--config", str(config), "--manifest", "m.jsonl",
                        "--out", str(tmp_path / "r.json")], capsys)
    assert code == 2
    assert "regime" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bgforensics.cli", "report", "--in", str(tmp_path / "none.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
