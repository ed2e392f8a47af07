"""End-to-end tests of the command-line interface and its exit codes."""

import os

import pytest

from vistafuse.cli import EXIT_CONFIG, EXIT_IO, EXIT_NAN, EXIT_SHAPE, main

SMALL = [
    "--crop-size", "32",
    "--conv-channels", "4,8",
    "--visual-widths", "32",
    "--tactile-widths", "32",
    "--feature-dim", "16",
    "--d-k", "16",
    "--classifier-width", "16",
    "--epochs", "2",
    "--batch-size", "8",
]


def _train(dataset_dir, out_dir, *extra):
    return main(
        ["train", "--dataset-dir", dataset_dir, "--out-dir", out_dir, *SMALL, *list(extra)]
    )


def test_generate_writes_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    code = main(
        [
            "generate",
            "--dataset-dir", str(out),
            "--n-specimens", "2",
            "--sweeps-per-specimen", "1",
            "--images-per-specimen", "1",
            "--classes", "H",
            "--image-px-len", "96",
            "--image-px-wid", "80",
            "--sweep-samples", "120",
        ]
    )
    assert code == 0
    assert (out / "manifest.jsonl").exists()
    stdout = capsys.readouterr().out
    assert "total,12" in stdout
    assert "H-0,2" in stdout


def test_train_eval_cycle(tiny_dataset, tmp_path, capsys):
    base_dir, _ = tiny_dataset
    run_dir = tmp_path / "run"
    assert _train(base_dir, str(run_dir)) == 0
    for name in ("run.json", "model.ckpt", "metrics.json", "confusion.csv", "attention_map.csv", "attention_map.pgm"):
        assert (run_dir / name).exists(), name
    assert "accuracy," in capsys.readouterr().out

    eval_dir = tmp_path / "eval"
    code = main(
        [
            "eval",
            "--dataset-dir", base_dir,
            "--out-dir", str(eval_dir),
            "--checkpoint", str(run_dir / "model.ckpt"),
            *SMALL,
        ]
    )
    assert code == 0
    # eval of the saved checkpoint reproduces the training run's test scores
    import json

    trained = json.loads((run_dir / "metrics.json").read_text())
    evaled = json.loads((eval_dir / "metrics.json").read_text())
    assert evaled["accuracy"] == trained["accuracy"]
    assert evaled["per_class_accuracy"] == trained["per_class_accuracy"]
    assert (eval_dir / "confusion.csv").read_text() == (run_dir / "confusion.csv").read_text()


def test_ablate_smoke(tiny_dataset, tmp_path, capsys):
    base_dir, _ = tiny_dataset
    out = tmp_path / "ablate"
    code = main(
        ["ablate", "--dataset-dir", base_dir, "--out-dir", str(out), "--seeds", "1", *SMALL]
    )
    assert code == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "strategy,seed,accuracy"
    labels = {line.split(",")[0] for line in lines[1:]}
    assert {"sum", "max", "concat", "attention"} <= labels
    assert any(",mean," in line for line in lines[1:])


def test_exit_code_config():
    assert main(["train", "--fusion", "mean"]) == EXIT_CONFIG
    assert main(["train", "--epochs", "not-a-number"]) == EXIT_CONFIG
    assert main(["generate", "--config", "/nonexistent.ini"]) == EXIT_CONFIG


def test_exit_code_io(tmp_path):
    assert _train(str(tmp_path / "missing"), str(tmp_path / "run")) == EXIT_IO


def test_exit_code_nan(tiny_dataset, tmp_path):
    base_dir, _ = tiny_dataset
    code = _train(base_dir, str(tmp_path / "run"), "--base-lr", "1e200")
    assert code == EXIT_NAN


def test_exit_code_shape_mismatch(tiny_dataset, tmp_path):
    base_dir, _ = tiny_dataset
    run_dir = tmp_path / "run"
    assert _train(base_dir, str(run_dir)) == 0
    code = main(
        [
            "eval",
            "--dataset-dir", base_dir,
            "--out-dir", str(tmp_path / "eval"),
            "--checkpoint", str(run_dir / "model.ckpt"),
            *SMALL[:-2],
            "--classifier-width", "24",  # differs from the trained model
        ]
    )
    assert code == EXIT_SHAPE
