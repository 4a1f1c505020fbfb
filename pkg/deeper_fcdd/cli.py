"""Define the deeper-fcdd command line."""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Optional, Sequence

from deeper_fcdd.config import PROFILE_NAMES, RunConfig, resolve_config
from deeper_fcdd.const import EVENT_CHECKPOINT_SAVED, EVENT_DEGENERATE_MAP, LOGGER
from deeper_fcdd.dataset import (
    filter_class,
    load_hazard_weights,
    read_manifest,
    scan,
    split,
    write_manifest,
)
from deeper_fcdd.errors import BaseFCDDError, ConfigError
from deeper_fcdd.model.manifest import DatasetManifest
from deeper_fcdd.pipeline import (
    async_ablate,
    async_evaluate,
    async_heatmap,
    async_score,
)
from deeper_fcdd.synthetic import synth
from deeper_fcdd.trainer import BEST_CHECKPOINT, CHECKPOINT_DIR, Trainer

ABLATION_GRID = (
    (1000, 1000),
    (2000, 1000),
    (3000, 1000),
    (4000, 1000),
    (2000, 2000),
    (3000, 2000),
    (4000, 2000),
)

# Dedicated flags and the config keys they set:
FLAG_KEYS = {
    "backbone": "backbone",
    "batch_size": "batch_size",
    "class_filter": "class_filter",
    "data_root": "data_root",
    "deterministic": "deterministic",
    "epochs": "epochs",
    "hazard_sidecar": "hazard_sidecar",
    "lr": "lr",
    "output": "output_dir",
    "seed": "seed",
    "workers": "workers",
}


def _backbone_value(value: str) -> Any:
    if value.lstrip().startswith("{"):
        try:
            return json.loads(value)
        except json.JSONDecodeError as err:
            raise argparse.ArgumentTypeError(f"Invalid inline backbone: {err}") from err
    return value


def parse_grid(value: str) -> list[tuple[int, int]]:
    """Parse comma-separated ``normal:anomalous`` cells, e.g. ``1000:1000,2000:500``."""
    cells = []
    for item in value.split(","):
        normal, sep, anomalous = item.strip().partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(
                f"Grid cell '{item}' is not normal:anomalous"
            )
        try:
            cells.append((int(normal), int(anomalous)))
        except ValueError as err:
            raise argparse.ArgumentTypeError(
                f"Grid cell '{item}' is not numeric"
            ) from err
    return cells


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=PROFILE_NAMES, help="named config profile")
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (value parsed as JSON; dotted keys nest)",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--backbone", type=_backbone_value, help="preset name or JSON")
    common.add_argument("--workers", type=int)
    common.add_argument(
        "--deterministic", action="store_true", default=None, help="single-threaded"
    )
    common.add_argument("--data-root", help="dataset root (<class>/{normal,anomalous})")
    common.add_argument("--manifest", type=Path, help="manifest CSV instead of a scan")
    common.add_argument("--hazard-sidecar", help="CSV of image_id,weight")
    common.add_argument("--class-filter", help="restrict to one class")
    common.add_argument("--output", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="deeper-fcdd",
        description="Train and apply a deeper-FCDD one-class anomaly detector.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[common], help="write a synthetic corpus")
    commands.add_parser("scan", parents=[common], help="scan and split a dataset")
    train_parser = commands.add_parser(
        "train", parents=[common], help="train a backbone"
    )
    train_parser.add_argument("--resume", type=Path, help="checkpoint to continue from")
    for name in ("score", "heatmap", "evaluate"):
        sub = commands.add_parser(name, parents=[common], help=f"run {name}")
        sub.add_argument(
            "--checkpoint", type=Path, help="defaults to the best checkpoint"
        )
    ablate_parser = commands.add_parser(
        "ablate", parents=[common], help="ablation grid"
    )
    ablate_parser.add_argument(
        "--grid",
        type=parse_grid,
        default=list(ABLATION_GRID),
        help="cells as normal:anomalous[,normal:anomalous...]",
    )
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Return the config layered from the parsed arguments."""
    flags = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items()}
    return resolve_config(
        profile=args.profile, config_path=args.config, flags=flags, overrides=args.set
    )


def _source_manifest(args: argparse.Namespace, config: RunConfig) -> DatasetManifest:
    if args.manifest is not None:
        return read_manifest(args.manifest)
    if config.data_root is not None:
        return scan(config.data_root)
    raise ConfigError("Pass --manifest or --data-root")


def load_manifest(args: argparse.Namespace, config: RunConfig) -> DatasetManifest:
    """Return the split manifest a command works on."""
    manifest = filter_class(_source_manifest(args, config), config.class_filter)
    if any(record.split is None for record in manifest):
        manifest = split(manifest, config.split_ratio, config.seed)
    return manifest


def _checkpoint(args: argparse.Namespace, config: RunConfig) -> Path:
    return args.checkpoint or config.output_path / CHECKPOINT_DIR / BEST_CHECKPOINT


def run_command(args: argparse.Namespace) -> None:
    """Run one parsed command."""
    config = config_from_args(args)
    output = config.output_path

    if args.command == "synth":
        root = Path(config.data_root or output / "data")
        manifest = synth(config.synthetic, root)
        write_manifest(root / "manifest.csv", manifest)
        config.write(output)
        return

    if args.command == "ablate":
        source = _source_manifest(args, config)
        config.write(output)
        asyncio.run(async_ablate(config, source, args.grid, output_dir=output))
        return

    manifest = load_manifest(args, config)
    config.write(output)

    if args.command == "scan":
        weighted = load_hazard_weights(manifest, config.hazard_sidecar)
        write_manifest(output / "manifest.csv", weighted)
    elif args.command == "train":
        write_manifest(output / "manifest.csv", manifest)
        trainer = Trainer(config, manifest, output_dir=output)
        trainer.on(
            EVENT_CHECKPOINT_SAVED,
            lambda data: LOGGER.info(
                "Saved %s checkpoint %s",
                "best" if data["best"] else "epoch",
                data["path"],
            ),
        )
        trainer.on(
            EVENT_DEGENERATE_MAP,
            lambda data: LOGGER.debug(
                "Clamped %d maps in batch %d", data["count"], data["batch"]
            ),
        )
        result = trainer.run(args.resume)
        LOGGER.info(
            "Best epoch %d (calibration AUC %s)", result.best_epoch, result.best_auc
        )
    elif args.command == "score":
        asyncio.run(async_score(config, _checkpoint(args, config), manifest))
    elif args.command == "heatmap":
        asyncio.run(async_heatmap(config, _checkpoint(args, config), manifest, output))
    elif args.command == "evaluate":
        asyncio.run(async_evaluate(config, _checkpoint(args, config), manifest, output))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        run_command(args)
    except BaseFCDDError as err:
        LOGGER.error("%s", err)
        return err.exit_code
    return 0
