"""Define tests for the command line."""
import argparse
import csv
import json

import pytest

from deeper_fcdd.cli import (
    ABLATION_GRID,
    build_parser,
    config_from_args,
    main,
    parse_grid,
)
from deeper_fcdd.dataset import read_manifest

from .conftest import TINY_BACKBONE

TINY_CORPUS = [
    "--set",
    "synthetic.n_normal=12",
    "--set",
    "synthetic.n_anomalous=8",
    "--set",
    "synthetic.image_size=[16, 16]",
    "--set",
    "synthetic.blob_radius=[2.0, 4.0]",
]


def tiny_run(output):
    """Return flags for a quick tiny-backbone run."""
    return [
        "--backbone",
        json.dumps(TINY_BACKBONE),
        "--set",
        "input_size=[16, 16]",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--seed",
        "3",
        "--deterministic",
        "--output",
        str(output),
    ]


def test_parse_grid():
    """Test grid cell parsing."""
    assert parse_grid("1000:1000, 2000:1000") == [(1000, 1000), (2000, 1000)]
    for value in ("1000", "a:b", "1000;1000"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_grid(value)


def test_default_ablation_grid():
    """Test the seven default cells."""
    args = build_parser().parse_args(["ablate"])
    assert args.grid == list(ABLATION_GRID)
    assert len(args.grid) == 7


def test_flags_feed_config():
    """Test that dedicated flags and overrides reach the config."""
    args = build_parser().parse_args(
        [
            "train",
            "--profile",
            "desk",
            "--epochs",
            "3",
            "--lr",
            "0.01",
            "--output",
            "out",
            "--set",
            "quartile=0.5",
        ]
    )
    config = config_from_args(args)
    assert (config.epochs, config.lr, config.quartile) == (3, 0.01, 0.5)
    assert config.output_dir == "out"
    assert config.deterministic is True
    assert config.seed == 0


def test_inline_backbone_flag():
    """Test that JSON backbones are parsed and bad JSON is refused."""
    args = build_parser().parse_args(["scan", "--backbone", json.dumps(TINY_BACKBONE)])
    assert args.backbone == TINY_BACKBONE
    with pytest.raises(SystemExit):
        build_parser().parse_args(["scan", "--backbone", "{broken"])


def test_synth_and_scan(tmp_path):
    """Test writing a corpus and scanning it into a split manifest."""
    data = tmp_path / "data"
    argv = ["synth", *TINY_CORPUS, "--data-root", str(data), "--output", str(tmp_path)]
    assert main(argv) == 0
    written = read_manifest(data / "manifest.csv")
    assert len(written) == 20
    assert (tmp_path / "config.json").is_file()

    out = tmp_path / "scanned"
    argv = ["scan", "--data-root", str(data), "--output", str(out), "--seed", "3"]
    assert main(argv) == 0
    scanned = read_manifest(out / "manifest.csv")
    assert scanned.seed == 3
    sizes = [len(scanned.select(split=name)) for name in ("train", "cal", "test")]
    assert sizes == [14, 3, 3]


@pytest.mark.parametrize(
    "argv,exit_code",
    [
        (["scan", "--set", "epoch=3", "--data-root", "x"], 2),
        (["scan"], 2),
        (["scan", "--profile", "desk", "--set", "batch_size=0", "--data-root", "x"], 2),
    ],
)
def test_config_errors_exit_2(argv, exit_code, tmp_path):
    """Test that configuration errors map to exit code 2."""
    assert main([*argv, "--output", str(tmp_path)]) == exit_code


def test_data_errors_exit_3(tmp_path):
    """Test that data errors map to exit code 3."""
    argv = ["scan", "--data-root", str(tmp_path / "missing"), "--output", str(tmp_path)]
    assert main(argv) == 3
    manifest = ["--manifest", str(tmp_path / "missing.csv"), "--output", str(tmp_path)]
    assert main(["evaluate", *manifest]) == 3


@pytest.mark.slow
def test_end_to_end(tmp_path):
    """Test synth, train, evaluate, heatmap and score on a tiny corpus."""
    data = tmp_path / "data"
    out = tmp_path / "run"
    run = tiny_run(out)

    assert main(["synth", *run, *TINY_CORPUS, "--data-root", str(data)]) == 0
    assert main(["train", *run, "--manifest", str(data / "manifest.csv")]) == 0
    assert (out / "checkpoints" / "epoch-001.fcdd").is_file()
    assert (out / "checkpoints" / "best.fcdd").is_file()
    assert (out / "history.csv").is_file()

    manifest = ["--manifest", str(out / "manifest.csv")]
    assert main(["evaluate", *run, *manifest]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["n_test"] == 3
    assert 0.0 <= report["auc"] <= 1.0

    assert main(["heatmap", *run, *manifest]) == 0
    assert len(list((out / "heatmaps").rglob("*.png"))) == 3
    assert (out / "histogram.csv").is_file()

    assert main(["score", *run, *manifest]) == 0
    assert len((out / "scores.csv").read_text().splitlines()) == 4

    resumed = tiny_run(out)
    resumed[resumed.index("--epochs") + 1] = "2"
    checkpoint = out / "checkpoints" / "epoch-001.fcdd"
    assert main(["train", *resumed, *manifest, "--resume", str(checkpoint)]) == 0
    assert (out / "checkpoints" / "epoch-002.fcdd").is_file()


@pytest.mark.slow
def test_desk_profile_learns_and_localizes(tmp_path):
    """Test detection, locality and loss descent of the desk profile."""
    data = tmp_path / "data"
    out = tmp_path / "run"
    run = ["--profile", "desk", "--output", str(out)]

    assert main(["synth", *run, "--data-root", str(data)]) == 0
    assert main(["train", *run, "--manifest", str(data / "manifest.csv")]) == 0
    manifest = ["--manifest", str(out / "manifest.csv")]
    assert main(["evaluate", *run, *manifest]) == 0
    assert main(["heatmap", *run, *manifest]) == 0

    report = json.loads((out / "report.json").read_text())
    assert report["auc"] >= 0.95
    assert report["f1"] >= 0.90
    locality = json.loads((out / "locality.json").read_text())
    assert locality["detected"] > 0
    assert locality["fraction"] >= 0.9

    with (out / "history.csv").open(newline="", encoding="utf-8") as fptr:
        losses = {
            int(row["epoch"]): float(row["mean_train_loss"])
            for row in csv.DictReader(fptr)
        }
    assert losses[10] < losses[1]


@pytest.mark.slow
def test_deterministic_runs_are_byte_identical(tmp_path):
    """Test that two seeded deterministic runs write identical artifacts."""
    for name in ("a", "b"):
        run = tiny_run(tmp_path / name / "run")
        data = tmp_path / name / "data"
        manifest = ["--manifest", str(tmp_path / name / "run" / "manifest.csv")]
        assert main(["synth", *run, *TINY_CORPUS, "--data-root", str(data)]) == 0
        assert main(["train", *run, "--manifest", str(data / "manifest.csv")]) == 0
        assert main(["evaluate", *run, *manifest]) == 0
        assert main(["heatmap", *run, *manifest]) == 0

    first, second = tmp_path / "a" / "run", tmp_path / "b" / "run"
    compared = [
        "manifest.csv",
        "checkpoints/epoch-001.fcdd",
        "checkpoints/best.fcdd",
        "report.json",
    ]
    compared += [
        str(path.relative_to(first)) for path in sorted(first.rglob("*.png"))
    ]
    assert len(compared) > 4
    for name in compared:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
