import csv
import json
import subprocess
import sys

import pytest

from durank.checkpoint import load_checkpoint
from durank.cli import main

SMALL = ["--num-short", "12", "--num-long", "12", "--num-eval", "6"]
TRAIN = ["--batch-size", "32", "--pairs", "320", "--epochs", "2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--seed", "3", *SMALL]) == 0
    return d


def train_args(data_dir, out, *extra):
    return ["train", "--manifest", str(data_dir / "manifest.jsonl"),
            "--features", str(data_dir / "features.f32"), "--out", str(out), *TRAIN, *extra]


def test_synth_is_reproducible(tmp_path, data_dir, capsys):
    assert main(["synth", "--out", str(tmp_path), "--seed", "3", *SMALL]) == 0
    for name in ("manifest.jsonl", "features.f32", "eval_manifest.jsonl", "labels.jsonl", "synth_report.json"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["expected_valid_fraction"] == pytest.approx(0.6)


def test_synth_refuses_to_overwrite(data_dir, capsys):
    assert main(["synth", "--out", str(data_dir), "--seed", "3", *SMALL]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["synth", "--out", str(data_dir), "--seed", "3", "--force", *SMALL]) == 0


def test_train_outputs(tmp_path, data_dir):
    assert main(train_args(data_dir, tmp_path)) == 0
    for name in ("checkpoint.drnk", "checkpoint.drnk.meta.json", "history.jsonl", "history.csv",
                 "history.svg", "config.json"):
        assert (tmp_path / name).exists(), name
    rows = list(csv.reader(open(tmp_path / "history.csv")))
    assert rows[0] == ["epoch", "loss", "metric"] and len(rows) == 3
    assert load_checkpoint(tmp_path / "checkpoint.drnk").epoch == 2


def test_ranking_d_equals_single_pair_groups(tmp_path, data_dir):
    assert main(train_args(data_dir, tmp_path / "d", "--method", "ranking_d")) == 0
    assert main(train_args(data_dir, tmp_path / "o", "--n", "1")) == 0
    a = load_checkpoint(tmp_path / "d" / "checkpoint.drnk")
    b = load_checkpoint(tmp_path / "o" / "checkpoint.drnk")
    assert all((x == y).all() for x, y in zip(a.scorer.params.tensors(), b.scorer.params.tensors()))
    assert (tmp_path / "d" / "history.jsonl").read_bytes() == (tmp_path / "o" / "history.jsonl").read_bytes()


def test_stop_and_resume(tmp_path, data_dir):
    assert main(train_args(data_dir, tmp_path / "full")) == 0
    assert main(train_args(data_dir, tmp_path / "part", "--stop-after", "1")) == 0
    assert load_checkpoint(tmp_path / "part" / "checkpoint.drnk").epoch == 1
    assert main(train_args(data_dir, tmp_path / "part", "--resume",
                           str(tmp_path / "part" / "checkpoint.drnk"))) == 0
    assert ((tmp_path / "part" / "checkpoint.drnk").read_bytes()
            == (tmp_path / "full" / "checkpoint.drnk").read_bytes())
    assert ((tmp_path / "part" / "history.jsonl").read_bytes()
            == (tmp_path / "full" / "history.jsonl").read_bytes())


def test_inconsistent_batch_exits_2(tmp_path, data_dir, capsys):
    code = main(train_args(data_dir, tmp_path, "--n", "8", "--t", "5"))
    assert code == 2
    assert "ConfigError" in capsys.readouterr().err


def test_missing_manifest_exits_3(tmp_path, data_dir):
    args = train_args(data_dir, tmp_path)
    args[2] = str(tmp_path / "nope.jsonl")
    assert main(args) == 3


def test_config_file_and_seed_env(tmp_path, data_dir, monkeypatch):
    cfg = {"manifest": str(data_dir / "manifest.jsonl"), "features": str(data_dir / "features.f32"),
           "batch_size": 32, "target_pairs": 320, "epochs": 1}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    monkeypatch.setenv("DURANK_SEED", "7")
    assert main(["train", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "a")]) == 0
    assert load_checkpoint(tmp_path / "a" / "checkpoint.drnk").config["seed"] == 7
    monkeypatch.setenv("DURANK_SEED", "oops")
    assert main(["train", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "b")]) == 2


def eval_args(data_dir, ckpt, out, *extra):
    return ["eval", "--checkpoint", str(ckpt), "--manifest", str(data_dir / "eval_manifest.jsonl"),
            "--features", str(data_dir / "eval_features.f32"), "--out", str(out), *extra]


def test_eval_protocols(tmp_path, data_dir):
    assert main(train_args(data_dir, tmp_path / "m")) == 0
    ckpt = tmp_path / "m" / "checkpoint.drnk"
    assert main(eval_args(data_dir, ckpt, tmp_path / "oracle", "--oracle-labels",
                          str(data_dir / "eval_labels.jsonl"))) == 0
    assert json.loads((tmp_path / "oracle" / "report.json").read_text())["overall"] == 1.0
    assert main(eval_args(data_dir, ckpt, tmp_path / "t5", "--protocol", "top5map")) == 0
    held = ["eval", "--checkpoint", str(ckpt), "--manifest", str(data_dir / "heldout_manifest.jsonl"),
            "--features", str(data_dir / "heldout_features.f32"), "--out", str(tmp_path / "sr"),
            "--protocol", "successrate", "--pairs", "500"]
    assert main(held) == 0
    rep = json.loads((tmp_path / "sr" / "report.json").read_text())
    assert rep["weighted_success_rate"] is not None
    lines = (tmp_path / "sr" / "report.csv").read_text().splitlines()
    assert lines[0] == "domain,video,metric,value" and len(lines) == 3


def test_eval_bad_checkpoint(tmp_path, data_dir):
    (tmp_path / "bad.drnk").write_bytes(b"DRNK" + bytes(30))
    assert main(eval_args(data_dir, tmp_path / "bad.drnk", tmp_path / "o")) == 5


def test_gradcheck(tmp_path, capsys):
    assert main(["gradcheck", "--trials", "3", "--out", str(tmp_path / "g.csv")]) == 0
    out = capsys.readouterr().out
    assert "0 of 3 failed" in out
    assert main(["gradcheck", "--trials", "2", "--corrupt-backward"]) == 4
    assert "2 of 2 failed" in capsys.readouterr().out


def test_sweep_and_report(tmp_path, data_dir):
    common = ["--manifest", str(data_dir / "manifest.jsonl"), "--features", str(data_dir / "features.f32"),
              "--eval-manifest", str(data_dir / "eval_manifest.jsonl"),
              "--eval-features", str(data_dir / "eval_features.f32"), "--out", str(tmp_path),
              "--batch-size", "32", "--pairs", "320", "--epochs", "1"]
    assert main(["sweep", "--axis", "n", "--grid", "1,4", *common]) == 0
    assert main(["sweep", "--axis", "thresholds", "--grid", "8:15:45:60,6:15:40:60", *common]) == 0
    rows = list(csv.reader(open(tmp_path / "sweep_thresholds.csv")))
    assert rows[0][:2] == ["setting", "metric"] and "n_short" in rows[0]
    assert (tmp_path / "sweep_n.svg").exists() and (tmp_path / "sweep_n.config.json").exists()
    assert main(["report", str(tmp_path / "sweep_n.csv"), str(tmp_path / "sweep_thresholds.csv"),
                 "--out", str(tmp_path / "rep")]) == 0
    assert sorted(p.name for p in (tmp_path / "rep").iterdir()) == [
        "summary.csv", "sweep_n.svg", "sweep_thresholds.svg"]
    assert main(["report", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "rep")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "durank", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "train", "eval", "gradcheck", "sweep", "report"):
        assert cmd in proc.stdout
