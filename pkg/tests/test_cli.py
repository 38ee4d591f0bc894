import csv
import json

import pytest

from themegen.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main

SMALL_EMBED = ["--layers", "1", "--hidden", "16", "--heads", "2", "--ff", "32", "--batch", "4", "--steps", "3"]
SMALL_MODEL = ["--hidden", "16", "--heads", "2", "--ff", "32", "--window", "64", "--batch", "2", "--steps", "3"]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """A miniature pipeline shared by the tests below."""
    root = tmp_path_factory.mktemp("runs")
    d = {k: root / k for k in ("corpus", "emb", "cluster", "f1", "train", "gen", "eval")}
    assert main(["corpus-synth", "--out", str(d["corpus"]), "--n", "6", "--seed", "3", "--midi"]) == EXIT_OK
    assert main(["embed-train", "--out", str(d["emb"]), "--pieces", str(d["corpus"]), *SMALL_EMBED]) == EXIT_OK
    assert main(["cluster", "--out", str(d["cluster"]), "--pieces", str(d["corpus"]), "--embedding", str(d["emb"]), "--fallback-first"]) == EXIT_OK
    assert main(["f1", "--out", str(d["f1"]), "--themes", str(d["cluster"]), "--ground-truth", str(d["corpus"])]) == EXIT_OK
    assert main(["train", "--out", str(d["train"]), "--pieces", str(d["corpus"]), "--themes", str(d["cluster"]), *SMALL_MODEL]) == EXIT_OK
    assert main(["generate", "--out", str(d["gen"]), "--model", str(d["train"]), "--themes", str(d["cluster"]),
                 "--count", "2", "--max-bars", "2", "--max-tokens", "60", "--context", "64"]) == EXIT_OK
    assert main(["evaluate", "--out", str(d["eval"]), "--generated", str(d["gen"]), "--embedding", str(d["emb"])]) == EXIT_OK
    return d


def test_pipeline_outputs(runs):
    assert len((runs["corpus"] / "pieces.jsonl").read_text().splitlines()) == 6
    assert len(list((runs["corpus"] / "midi").glob("*.mid"))) == 6
    assert (runs["emb"] / "embedding.ckpt").exists() and (runs["emb"] / "loss.csv").exists()
    themes = json.loads((runs["cluster"] / "themes.json").read_text())
    assert len(themes["themes"]) == 6
    rows = list(csv.reader(open(runs["f1"] / "f1.csv")))
    assert rows[0] == ["piece", "precision", "recall", "f1"] and rows[-1][0] == "mean"
    gen = json.loads((runs["gen"] / "generated.json").read_text())
    assert gen["variant"] == "theme" and len(gen["pieces"]) == 2
    header = next(csv.reader(open(runs["eval"] / "report.csv")))
    assert "theme_inconsistency" in header


def test_manifest_records_run(runs):
    m = json.loads((runs["cluster"] / "manifest.json").read_text())
    assert m["command"] == "cluster" and m["seed"] == 0
    assert m["config"]["eps"] == 0.13
    assert set(m["inputs"]) == {"pieces", "embedding"}
    assert "themes.json" in m["outputs"] and len(m["outputs"]["themes.json"]) == 64
    assert "git_describe" in m


def test_commands_are_deterministic(runs, tmp_path):
    again = tmp_path / "emb"
    assert main(["embed-train", "--out", str(again), "--pieces", str(runs["corpus"]), *SMALL_EMBED]) == EXIT_OK
    assert (again / "embedding.ckpt").read_bytes() == (runs["emb"] / "embedding.ckpt").read_bytes()
    gen = tmp_path / "gen"
    assert main(["generate", "--out", str(gen), "--model", str(runs["train"]), "--themes", str(runs["cluster"]),
                 "--count", "2", "--max-bars", "2", "--max-tokens", "60", "--context", "64"]) == EXIT_OK
    assert (gen / "generated.json").read_bytes() == (runs["gen"] / "generated.json").read_bytes()


def test_prompt_evaluation_omits_theme_columns(runs, tmp_path):
    args = ["--pieces", str(runs["corpus"]), "--themes", str(runs["cluster"])]
    assert main(["train", "--out", str(tmp_path / "t"), *args, "--variant", "prompt", *SMALL_MODEL]) == EXIT_OK
    assert main(["generate", "--out", str(tmp_path / "g"), "--model", str(tmp_path / "t"), "--themes", str(runs["cluster"]),
                 "--count", "1", "--max-bars", "2", "--max-tokens", "60", "--context", "64"]) == EXIT_OK
    assert main(["evaluate", "--out", str(tmp_path / "e"), "--generated", str(tmp_path / "g"), "--embedding", str(runs["emb"])]) == EXIT_OK
    header = next(csv.reader(open(tmp_path / "e" / "report.csv")))
    assert "theme_inconsistency" not in header and "pitch_class_consistency" in header


def test_tokenize_and_curve(runs, tmp_path):
    assert main(["tokenize", "--out", str(tmp_path / "tok"), "--pieces", str(runs["corpus"])]) == EXIT_OK
    assert len(list((tmp_path / "tok" / "tokens").glob("*.txt"))) == 6
    assert main(["curve", "--out", str(tmp_path / "c"), "--pieces", str(runs["corpus"]), "--embedding", str(runs["emb"])]) == EXIT_OK
    assert len(list((tmp_path / "c" / "curves").glob("*.csv"))) == 6


def test_config_file_and_overrides(runs, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eps": 0.2, "min-points": 3}))
    out = tmp_path / "a"
    base = ["cluster", "--pieces", str(runs["corpus"]), "--embedding", str(runs["emb"]), "--config", str(cfg)]
    assert main([*base, "--out", str(out), "--min-points", "2"]) == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())["config"]
    assert m["eps"] == 0.2 and m["min_points"] == 2
    cfg.write_text(json.dumps({"epsilon": 0.2}))
    assert main([*base, "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    cfg.write_text("[1, 2]")
    assert main([*base, "--out", str(tmp_path / "b")]) == EXIT_CONFIG


def test_refuses_non_empty_out(tmp_path):
    args = ["corpus-synth", "--out", str(tmp_path), "--n", "2", "--midi"]
    (tmp_path / "stale.txt").write_text("old")
    assert main(args) == EXIT_CONFIG
    assert main([*args, "--force"]) == EXIT_OK
    assert main([*args, "--force"]) == EXIT_OK
    assert not (tmp_path / "stale.txt").exists()
    assert "stale.txt" not in json.loads((tmp_path / "manifest.json").read_text())["outputs"]


def test_missing_inputs_are_data_errors(tmp_path, capsys):
    assert main(["embed-train", "--out", str(tmp_path / "e"), "--pieces", str(tmp_path / "nope")]) == EXIT_DATA
    assert "corpus-synth" in capsys.readouterr().err
    assert main(["cluster", "--out", str(tmp_path / "c")]) == EXIT_DATA


def test_wrong_checkpoint_kind_is_data_error(runs, tmp_path):
    args = ["generate", "--out", str(tmp_path / "g"), "--model", str(runs["emb"] / "embedding.ckpt"), "--themes", str(runs["cluster"])]
    assert main(args) == EXIT_DATA


def test_invalid_model_config(runs, tmp_path):
    args = ["train", "--out", str(tmp_path / "t"), "--pieces", str(runs["corpus"]), "--themes", str(runs["cluster"]), "--layers", "3"]
    assert main(args) == EXIT_CONFIG


def test_non_finite_training_exits_numeric(runs, tmp_path):
    args = ["train", "--out", str(tmp_path / "t"), "--pieces", str(runs["corpus"]), "--themes", str(runs["cluster"]), *SMALL_MODEL]
    assert main([*args, "--lr", "nan"]) == EXIT_NUMERIC
