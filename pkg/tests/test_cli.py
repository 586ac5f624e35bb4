import json
import subprocess
import sys

import pytest

from chartalign.cli import OUTPUT_ENV, main
from chartalign.model import load_checkpoint

SMALL_MODEL = {"model": {"d_v": 16, "d_k": 16, "d_l": 32, "vision_layers": 1, "vision_heads": 2,
                         "lm_layers": 1, "lm_heads": 2, "num_queries": 4, "max_len": 500,
                         "max_merges": 40}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "model.json").write_text(json.dumps(SMALL_MODEL))
    assert main(["synth", "--out", str(root / "data"), "--n-per-category", "2", "--seed", "4",
                 "--resolution", "384"]) == 0
    return root


@pytest.fixture(scope="module")
def stage2_ckpt(workdir):
    c = str(workdir / "model.json")
    assert main(["train", "--stage", "1", "--data", str(workdir / "data"), "--config", c,
                 "--max-steps", "2", "--lr", "1e-3", "--out", str(workdir / "s1.ckpt")]) == 0
    assert main(["train", "--stage", "2", "--data", str(workdir / "data"), "--init", str(workdir / "s1.ckpt"),
                 "--max-steps", "2", "--lr", "1e-3", "--out", str(workdir / "s2.ckpt")]) == 0
    return workdir / "s2.ckpt"


def test_synth_layout(workdir):
    d = workdir / "data"
    meta = json.loads((d / "dataset.json").read_text())
    assert meta["resolution"] == 384 and meta["num_records"] == 8
    assert len(list((d / "images").glob("*.png"))) == meta["num_charts"]
    assert (d / "stage1.jsonl").is_file()


def test_train_defaults_come_from_stage(stage2_ckpt, workdir):
    s1 = load_checkpoint(workdir / "s1.ckpt")
    assert s1.config_snapshot["alignment"]["batch_size"] == 16
    assert s1.config_snapshot["alignment"]["epochs"] == 6
    s2 = load_checkpoint(stage2_ckpt)
    assert s2.config_snapshot["reasoning"]["batch_size"] == 8
    assert s2.completed_stages() == ["alignment", "reasoning"]
    assert s2.config.resolution == 384


def test_eval_writes_report(stage2_ckpt, workdir, capsys):
    rep = workdir / "rep" / "r.json"
    assert main(["eval", "--ckpt", str(stage2_ckpt), "--data", str(workdir / "data"),
                 "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["total"] == 8 and "content_hash" in d
    assert "Overall" in capsys.readouterr().out
    assert rep.with_suffix(".txt").is_file()


def test_predict_and_chart2text(stage2_ckpt, workdir, capsys):
    img = sorted((workdir / "data" / "images").glob("*.png"))[0]
    assert main(["predict", "--ckpt", str(stage2_ckpt), "--image", str(img),
                 "--question", "What is the title of the chart?"]) == 0
    assert main(["chart2text", "--image", str(img)]) == 0
    out = capsys.readouterr().out
    assert "category | " in out


def test_chart2text_from_spec(workdir, capsys):
    spec = sorted((workdir / "data" / "specs").glob("*.json"))[0]
    assert main(["chart2text", "--spec", str(spec)]) == 0
    assert "category" in capsys.readouterr().out


def test_ablate(stage2_ckpt, workdir, capsys):
    base = {"train_data": str(workdir / "data"), "model": {**SMALL_MODEL["model"], "resolution": 384},
            "stage1": {"max_steps": 1, "learning_rate": 1e-3}, "stage2": {"max_steps": 1, "learning_rate": 1e-3}}
    (workdir / "base.json").write_text(json.dumps(base))
    assert main(["ablate", "--base", str(workdir / "base.json"), "--axes", "chart2text_off_test",
                 "--data", str(workdir / "data"), "--report", str(workdir / "abl.json")]) == 0
    rows = json.loads((workdir / "abl.json").read_text())["rows"]
    assert [r["axis"] for r in rows] == ["base", "chart2text_off_test"]


def test_output_dir_from_environment(workdir, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(workdir / "envout"))
    assert main(["train", "--stage", "1", "--data", str(workdir / "data"), "--config",
                 str(workdir / "model.json"), "--max-steps", "1"]) == 0
    assert (workdir / "envout" / "stage1.ckpt").is_file()


@pytest.mark.parametrize("argv", [
    ["train", "--stage", "2", "--data", "DATA"],  # no stage-1 checkpoint
    ["train", "--stage", "1", "--data", "DATA", "--epochs", "0", "--out", "X"],
    ["train", "--stage", "1", "--data", "/nonexistent", "--out", "X"],
    ["eval", "--ckpt", "/nonexistent.ckpt", "--data", "DATA", "--report", "X"],
    ["ablate", "--base", "BASE", "--axes", "dropout", "--data", "DATA"],
    ["chart2text", "--spec", "/nonexistent.json"],
])
def test_errors_exit_nonzero(workdir, argv, capsys):
    (workdir / "empty.json").write_text("{}")
    argv = [a.replace("DATA", str(workdir / "data")).replace("BASE", str(workdir / "empty.json"))
            .replace("X", str(workdir / "x.out")) for a in argv]
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_missing_output_without_environment(workdir, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert main(["synth", "--n-per-category", "1"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "chartalign", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "ablate" in r.stdout
