import json
import os
from pathlib import Path

import pytest

from amc import fixtures_data as fx
from amc.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def parsed_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("parsed") / "movies.jsonl"
    assert run("parse", "--in", str(fx.fixtures_dir()), "--out", str(out)) == 0
    return out


@pytest.fixture(scope="module")
def bench_dir(parsed_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench") / "benchmark"
    genres = fx.fixtures_dir() / "genres.tsv"
    assert run("build", "--parsed", str(parsed_file), "--out", str(out),
               "--seed", "42", "--split", "8,2,2", "--genres", str(genres)) == 0
    return out


# --- parse ------------------------------------------------------------------


def test_parse_fixture_dir(parsed_file):
    lines = [json.loads(l) for l in parsed_file.read_text().splitlines()]
    assert sorted(l["title"] for l in lines) == fx.fixture_ids()
    assert len(lines) == 12
    labels = fx.fixture_labels()
    for obj in lines:
        assert len(obj["scenes"]) == labels[obj["title"]]["scene_count"]


def test_parse_empty_dir(tmp_path):
    out = tmp_path / "empty.jsonl"
    (tmp_path / "none").mkdir()
    assert run("parse", "--in", str(tmp_path / "none"), "--out", str(out)) == 0
    assert out.read_text() == ""


def test_parse_unreadable_file_warns_and_skips(tmp_path, capsys):
    src = tmp_path / "scripts"
    src.mkdir()
    (src / "good.txt").write_text("INT. A - DAY\n\nSome action.\n")
    (src / "broken.txt").symlink_to(tmp_path / "missing-target.txt")
    out = tmp_path / "out.jsonl"
    assert run("parse", "--in", str(src), "--out", str(out)) == 0
    assert "skipping broken.txt" in capsys.readouterr().err
    assert len(out.read_text().splitlines()) == 1


def test_parse_bad_in_dir(tmp_path):
    assert run("parse", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 2


# --- build ------------------------------------------------------------------


def test_build_outputs(bench_dir):
    manifest = json.loads((bench_dir / "manifest.json").read_text())
    assert manifest["seed"] == 42
    assert manifest["stats"]["train"]["movies"] == 8
    for split in ("train", "dev", "test"):
        assert (bench_dir / split / "tasks.jsonl").is_file()
    assert (bench_dir / "genres.tsv").is_file()


def test_build_rerun_identical_bytes(parsed_file, bench_dir, tmp_path):
    out2 = tmp_path / "again"
    genres = fx.fixtures_dir() / "genres.tsv"
    assert run("build", "--parsed", str(parsed_file), "--out", str(out2),
               "--seed", "42", "--split", "8,2,2", "--genres", str(genres)) == 0
    for rel in ("manifest.json", "train/tasks.jsonl", "dev/tasks.jsonl",
                "test/tasks.jsonl", "genres.tsv"):
        assert (bench_dir / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_build_split_exceeding_corpus(parsed_file, tmp_path):
    assert run("build", "--parsed", str(parsed_file), "--out", str(tmp_path / "x"),
               "--seed", "1", "--split", "20,2,2") == 2


def test_build_bad_split_string(parsed_file, tmp_path):
    assert run("build", "--parsed", str(parsed_file), "--out", str(tmp_path / "x"),
               "--split", "1,2") == 2


# --- train / eval -----------------------------------------------------------


TRAIN_CFG = """
method = proto
seed = 0
d_model = 16
window = 8
max_len = 80
lr = 0.005
temperature = 0.2
epochs = 2
batch_scenes = 3
accumulate_batches = 2
support_batches = 2
"""


@pytest.fixture(scope="module")
def run_dir(bench_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "proto.cfg"
    cfg.write_text(TRAIN_CFG)
    out = root / "proto_run"
    assert run("train", "--config", str(cfg), "--benchmark", str(bench_dir),
               "--out", str(out)) == 0
    return out


def test_train_outputs(run_dir):
    assert (run_dir / "checkpoint.amc").is_file()
    assert (run_dir / "vocab.txt").is_file()
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["method"] == "proto"
    rows = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == cfg["epochs"]
    assert [r["epoch"] for r in rows] == list(range(cfg["epochs"]))


def test_train_method_flag_overrides(bench_dir, tmp_path):
    cfg = tmp_path / "cfg"
    cfg.write_text(TRAIN_CFG.replace("epochs = 2", "epochs = 1"))
    out = tmp_path / "mtl_run"
    assert run("train", "--method", "mtl", "--config", str(cfg),
               "--benchmark", str(bench_dir), "--out", str(out)) == 0
    assert json.loads((out / "config.json").read_text())["method"] == "mtl"


def test_eval_writes_report(run_dir, bench_dir, tmp_path):
    report_path = tmp_path / "report.json"
    assert run("eval", "--ckpt", str(run_dir / "checkpoint.amc"),
               "--benchmark", str(bench_dir), "--split", "test",
               "--out", str(report_path)) == 0
    report = json.loads(report_path.read_text())
    assert report["method"] == "proto"
    assert 0.0 <= report["overall_accuracy"] <= 1.0
    assert "by_genre" in report and "by_n_speakers" in report
    assert report["n_instances"] > 0
    preds_file = report_path.with_suffix(".predictions.jsonl")
    assert len(preds_file.read_text().splitlines()) == report["n_instances"]


def test_eval_decomposition_partition(run_dir, bench_dir, tmp_path):
    report_path = tmp_path / "r.json"
    run("eval", "--ckpt", str(run_dir / "checkpoint.amc"),
        "--benchmark", str(bench_dir), "--split", "dev", "--out", str(report_path))
    report = json.loads(report_path.read_text())
    total = sum(cell["total"] for cell in report["by_n_speakers"].values())
    correct = sum(cell["correct"] for cell in report["by_n_speakers"].values())
    assert total == report["n_instances"]
    assert correct / total == pytest.approx(report["overall_accuracy"])


def test_eval_empty_split_exit_2(parsed_file, tmp_path):
    out = tmp_path / "nodev"
    genres = fx.fixtures_dir() / "genres.tsv"
    run("build", "--parsed", str(parsed_file), "--out", str(out),
        "--seed", "1", "--split", "12,0,0", "--genres", str(genres))
    cfg = tmp_path / "cfg"
    cfg.write_text(TRAIN_CFG.replace("epochs = 2", "epochs = 1"))
    rd = tmp_path / "rd"
    assert run("train", "--config", str(cfg), "--benchmark", str(out), "--out", str(rd)) == 0
    assert run("eval", "--ckpt", str(rd / "checkpoint.amc"),
               "--benchmark", str(out), "--split", "dev") == 2


def test_eval_missing_ckpt(tmp_path):
    assert run("eval", "--ckpt", str(tmp_path / "nope.amc"), "--split", "dev") == 2


def test_usage_error_exit_code():
    assert run("definitely-not-a-command") == 2


def test_fixtures_command(capsys):
    assert run("fixtures") == 0
    out = capsys.readouterr().out.strip()
    assert Path(out).is_dir()
