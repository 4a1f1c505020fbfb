"""Define the score, heatmap, evaluate and ablate commands."""
from __future__ import annotations

import asyncio
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, replace
import json
from pathlib import Path
from typing import Any, Awaitable, Callable, Optional, Sequence, TypeVar, Union

import numpy as np

from deeper_fcdd.backbone import Backbone
from deeper_fcdd.config import RunConfig
from deeper_fcdd.const import LABEL_ANOMALOUS, LOGGER, SPLIT_CAL, SPLIT_TEST
from deeper_fcdd.dataset import (
    ablation_sample,
    filter_class,
    ground_truth_path,
    load_hazard_weights,
    split,
    write_manifest,
)
from deeper_fcdd.errors import (
    BaseFCDDError,
    ConfigError,
    DataError,
    UndefinedMetricError,
)
from deeper_fcdd.heatmap import (
    DisplayRange,
    Heatmap,
    display_range,
    histogram,
    mass_inside,
    overlay,
    render,
    upsample,
    write_pfm,
    write_png,
)
from deeper_fcdd.images import ImageLoader, decode_image, resize_bilinear
from deeper_fcdd.metrics import (
    calibrate_threshold,
    confusion_metrics,
    per_class_metrics,
    roc_auc,
)
from deeper_fcdd.model.manifest import DatasetManifest, ManifestRecord
from deeper_fcdd.model.report import MetricsReport, write_report_csv
from deeper_fcdd.objective import AnomalyMap, ScoreRow, image_score, write_score_csv
from deeper_fcdd.trainer import anomaly_maps, load_backbone, train

ABLATION_CSV_COLUMNS = (
    "normal",
    "anomalous",
    "auc",
    "f1",
    "precision",
    "recall",
    "threshold",
    "seed",
    "status",
    "reason",
)
LOCALITY_CSV_COLUMNS = ("image_id", "score", "detected", "mass_inside")
LOCALITY_MASS_TARGET = 0.5

_T = TypeVar("_T")


@dataclass
class ScoredImage:
    """Define one image's anomaly map and scores."""

    record: ManifestRecord
    anomaly_map: AnomalyMap
    score: float

    @property
    def row(self) -> ScoreRow:
        """Return the export row."""
        return ScoreRow(
            image_id=self.record.image_id,
            label=self.record.label,
            score=self.score,
            hazard_weight=self.record.hazard_weight,
        )


def make_loader(config: RunConfig, manifest: DatasetManifest) -> ImageLoader:
    """Return an image loader following the config."""
    return ImageLoader(
        manifest,
        config.input_size,
        in_channels=config.in_channels,
        dtype=config.precision,
        workers=1 if config.deterministic else config.workers,
        cache=config.cache_images,
    )


async def _async_fan_out(
    config: RunConfig, job: Callable[..., _T], items: Sequence[tuple]
) -> list[_T]:
    """Run job over items in a thread pool; results follow item order."""
    if config.deterministic or config.workers == 1:
        return [job(*item) for item in items]
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        return list(
            await asyncio.gather(
                *(loop.run_in_executor(executor, job, *item) for item in items)
            )
        )


async def async_score_records(
    config: RunConfig,
    backbone: Backbone,
    manifest: DatasetManifest,
    records: Sequence[ManifestRecord],
) -> list[ScoredImage]:
    """Return anomaly maps and image scores in record order."""
    loader = make_loader(config, manifest)
    scored = []
    for start in range(0, len(records), config.batch_size):
        chunk = records[start : start + config.batch_size]
        batch = await loader.async_load_batch(chunk)
        for record, anomaly_map in zip(
            chunk, anomaly_maps(backbone, batch.images, batch.image_ids)
        ):
            score = image_score(anomaly_map, config.score_reduction)
            scored.append(ScoredImage(record, anomaly_map, score))
    return scored


def _prepare(config: RunConfig, manifest: DatasetManifest) -> DatasetManifest:
    manifest = filter_class(manifest, config.class_filter)
    return load_hazard_weights(manifest, config.hazard_sidecar)


async def async_score(
    config: RunConfig,
    checkpoint: Union[str, Path],
    manifest: DatasetManifest,
    *,
    output: Union[str, Path, None] = None,
) -> list[ScoreRow]:
    """Score the configured split and write scores.csv in manifest order."""
    backbone, _ = load_backbone(checkpoint, config)
    manifest = _prepare(config, manifest)
    records = manifest.select(split=config.score_split).records
    if not records:
        raise DataError(f"Split '{config.score_split}' is empty")

    scored = await async_score_records(config, backbone, manifest, records)
    rows = [item.row for item in scored]
    path = write_score_csv(output or config.output_path / "scores.csv", rows)
    LOGGER.info("Scored %d images into %s", len(rows), path)
    return rows


def _raw_image(images: np.ndarray) -> np.ndarray:
    """Return the h x w x 3 uint8 view of a C x h x w tensor in [0, 1]."""
    pixels = np.floor(np.transpose(images, (1, 2, 0)) * 255.0 + 0.5)
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return pixels.astype(np.uint8)


@dataclass
class HeatmapResult:
    """Define what a heatmap run wrote."""

    output_dir: Path
    display: Optional[DisplayRange]
    image_ids: list[str]
    locality: list[dict[str, Any]]
    locality_fraction: Optional[float]


class _HeatmapJob:
    """Define per-image heatmap work shared across a thread pool."""

    def __init__(self, config: RunConfig, backbone: Backbone, output_dir: Path) -> None:
        """Initialize."""
        self.config = config
        self.geometry = backbone.geometry
        self.output_dir = output_dir

    def upsample(self, item: ScoredImage) -> Heatmap:
        """Return the full-resolution heatmap of one image and write it raw."""
        heatmap = upsample(
            item.anomaly_map,
            self.geometry,
            self.config.delta,
            mode=self.config.upsample_mode,
            truncate=self.config.truncate,
        )
        raw_path = self.output_dir / "raw" / f"{item.record.image_id}.pfm"
        write_pfm(raw_path, heatmap.values)
        return heatmap

    def render(
        self,
        item: ScoredImage,
        heatmap: Heatmap,
        raw: np.ndarray,
        display: Optional[DisplayRange],
    ) -> None:
        """Write the rendered heatmap and its overlay."""
        if display is None:
            display = display_range(heatmap.values, self.config.quartile)
        rendered = render(heatmap, display)
        image_id = item.record.image_id
        write_png(self.output_dir / "heatmaps" / f"{image_id}.png", rendered)
        write_png(
            self.output_dir / "overlays" / f"{image_id}.png",
            overlay(raw, rendered, self.config.overlay_alpha),
        )


def _calibrated_threshold(
    config: RunConfig, scored: Sequence[ScoredImage]
) -> Optional[float]:
    try:
        return calibrate_threshold(
            [item.score for item in scored],
            [item.record.label for item in scored],
            config.calibration,
        )
    except UndefinedMetricError:
        return None


def _ground_truth(
    config: RunConfig, manifest: DatasetManifest, record: ManifestRecord
) -> Optional[np.ndarray]:
    path = ground_truth_path(manifest, record)
    if path is None:
        return None
    resized = resize_bilinear(decode_image(path, in_channels=1), config.input_size)
    return resized[..., 0] >= 127.5


async def async_heatmap(
    config: RunConfig,
    checkpoint: Union[str, Path],
    manifest: DatasetManifest,
    output_dir: Union[str, Path, None] = None,
) -> HeatmapResult:
    """Render heatmaps, overlays and raw maps of the configured split.

    Also writes histogram.csv over image scores and, for anomalous images with a
    ground-truth mask, locality.csv with the share of heatmap mass inside the mask
    dilated by half the receptive-field extent.
    """
    output_dir = Path(output_dir or config.output_path)
    backbone, _ = load_backbone(checkpoint, config)
    manifest = _prepare(config, manifest)
    records = manifest.select(split=config.score_split).records
    if not records:
        raise DataError(f"Split '{config.score_split}' is empty")

    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"Cannot create output directory {output_dir}: {err}") from err

    scored = await async_score_records(config, backbone, manifest, records)
    job = _HeatmapJob(config, backbone, output_dir)

    heatmaps = await _async_fan_out(config, job.upsample, [(item,) for item in scored])
    display = None
    if config.range_scope == "batch":
        extremes = [
            (heatmap.values.min(), heatmap.values.max()) for heatmap in heatmaps
        ]
        display = display_range(np.array(extremes).ravel(), config.quartile)
        LOGGER.info("Display range [%s, %s]", display.lo, display.hi)

    loader = make_loader(config, manifest)
    for start in range(0, len(scored), config.batch_size):
        chunk = scored[start : start + config.batch_size]
        batch = await loader.async_load_batch([item.record for item in chunk])
        await _async_fan_out(
            config,
            job.render,
            [
                (item, heatmap, _raw_image(images), display)
                for item, heatmap, images in zip(
                    chunk, heatmaps[start : start + config.batch_size], batch.images
                )
            ],
        )

    histogram(
        [(item.score, item.record.label) for item in scored], config.histogram_bins
    ).write_csv(output_dir / "histogram.csv")

    cal_records = manifest.select(split=SPLIT_CAL).records
    threshold = None
    if cal_records:
        threshold = _calibrated_threshold(
            config, await async_score_records(config, backbone, manifest, cal_records)
        )
    radius = max(backbone.geometry.extent) / 2.0
    locality = []
    for item, heatmap in zip(scored, heatmaps):
        if item.record.label != LABEL_ANOMALOUS:
            continue
        mask = _ground_truth(config, manifest, item.record)
        if mask is None:
            continue
        locality.append(
            {
                "image_id": item.record.image_id,
                "score": item.score,
                "detected": (
                    None if threshold is None else bool(item.score >= threshold)
                ),
                "mass_inside": mass_inside(heatmap, mask, radius),
            }
        )
    fraction = _write_locality(output_dir, locality, threshold, radius)

    LOGGER.info("Wrote %d heatmaps under %s", len(scored), output_dir)
    return HeatmapResult(
        output_dir=output_dir,
        display=display,
        image_ids=[item.record.image_id for item in scored],
        locality=locality,
        locality_fraction=fraction,
    )


def _write_locality(
    output_dir: Path,
    locality: list[dict[str, Any]],
    threshold: Optional[float],
    radius: float,
) -> Optional[float]:
    if not locality:
        return None
    with (output_dir / "locality.csv").open("w", newline="", encoding="utf-8") as fptr:
        writer = csv.DictWriter(
            fptr, fieldnames=LOCALITY_CSV_COLUMNS, lineterminator="\n"
        )
        writer.writeheader()
        for row in locality:
            writer.writerow(
                {
                    **row,
                    "score": repr(row["score"]),
                    "detected": "" if row["detected"] is None else int(row["detected"]),
                    "mass_inside": repr(row["mass_inside"]),
                }
            )

    detected = [row for row in locality if row["detected"] is True]
    undetermined = sum(row["detected"] is None for row in locality)
    meeting = [row for row in detected if row["mass_inside"] >= LOCALITY_MASS_TARGET]
    fraction = len(meeting) / len(detected) if detected else None
    summary = {
        "detected": len(detected),
        "dilation_radius": radius,
        "fraction": fraction,
        "mass_target": LOCALITY_MASS_TARGET,
        "meeting_target": len(meeting),
        "threshold": (
            threshold
            if threshold is None or np.isfinite(threshold)
            else str(threshold)
        ),
        "undetermined": undetermined,
    }
    (output_dir / "locality.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return fraction


async def async_evaluate(
    config: RunConfig,
    checkpoint: Union[str, Path],
    manifest: DatasetManifest,
    output_dir: Union[str, Path, None] = None,
) -> MetricsReport:
    """Calibrate a threshold on the calibration split and report on the test split."""
    output_dir = Path(output_dir or config.output_path)
    backbone, stored = load_backbone(checkpoint, config)
    manifest = _prepare(config, manifest)
    cal_records = manifest.select(split=SPLIT_CAL).records
    test_records = manifest.select(split=SPLIT_TEST).records
    if not cal_records or not test_records:
        raise DataError(
            f"Evaluation needs calibration and test images, got {len(cal_records)} "
            f"and {len(test_records)}"
        )

    cal = await async_score_records(config, backbone, manifest, cal_records)
    test = await async_score_records(config, backbone, manifest, test_records)
    threshold = calibrate_threshold(
        [item.score for item in cal],
        [item.record.label for item in cal],
        config.calibration,
    )

    test_scores = [item.score for item in test]
    test_labels = [item.record.label for item in test]
    report = confusion_metrics(
        test_scores, test_labels, threshold, config_digest=config.digest
    )
    report.auc = roc_auc(test_scores, test_labels)
    report.meta = {
        "calibration": config.calibration,
        "checkpoint_epoch": stored.meta.get("epoch"),
        "score_reduction": config.score_reduction,
        "seed": config.seed,
        "selection": stored.meta.get("selection"),
    }
    classes = [item.record.class_name for item in test]
    if len(set(classes)) > 1:
        report.per_class = per_class_metrics(
            test_scores, test_labels, classes, threshold
        )

    report.write_json(output_dir / "report.json")
    write_report_csv(output_dir / "report.csv", [report])
    LOGGER.info(
        "Test AUC %.4f, F1 %.4f (precision %.4f, recall %.4f) at threshold %s",
        report.auc,
        report.f1,
        report.precision,
        report.recall,
        threshold,
    )
    return report


CellRunner = Callable[[RunConfig, DatasetManifest, Path], Awaitable[MetricsReport]]


async def async_run_cell(
    config: RunConfig, pool: DatasetManifest, output_dir: Path
) -> MetricsReport:
    """Split, train and evaluate one ablation pool."""
    manifest = split(pool, config.split_ratio, config.seed)
    write_manifest(output_dir / "manifest.csv", manifest)
    config.write(output_dir)
    result = train(config, manifest, output_dir=output_dir)
    if result.best_checkpoint is None:
        raise ConfigError("Ablation cells need at least one training epoch")
    return await async_evaluate(config, result.best_checkpoint, manifest, output_dir)


async def async_ablate(
    config: RunConfig,
    source: DatasetManifest,
    grid: Sequence[tuple[int, int]],
    *,
    output_dir: Union[str, Path, None] = None,
    runner: Optional[CellRunner] = None,
) -> list[dict[str, Any]]:
    """Train and evaluate one pooled sample per (n_normal, n_anomalous) cell.

    Cell i uses seed ``config.seed + i``. Infeasible cells are recorded as skipped.
    """
    output_dir = Path(output_dir or config.output_path)
    runner = runner or async_run_cell
    source = filter_class(source, config.class_filter)

    rows = []
    for index, (n_normal, n_anomalous) in enumerate(grid):
        seed = config.seed + index
        row: dict[str, Any] = {
            "normal": n_normal,
            "anomalous": n_anomalous,
            "seed": seed,
            "status": "ok",
            "reason": "",
        }
        cell_dir = output_dir / "ablation" / f"{n_normal}-{n_anomalous}"
        try:
            pool = ablation_sample(source, n_normal, n_anomalous, seed=seed)
            report = await runner(replace(config, seed=seed), pool, cell_dir)
        except BaseFCDDError as err:
            LOGGER.warning(
                "Skipping ablation cell %d:%d: %s", n_normal, n_anomalous, err
            )
            row.update(status="skipped", reason=str(err))
        else:
            row.update(
                auc=report.auc,
                f1=report.f1,
                precision=report.precision,
                recall=report.recall,
                threshold=report.threshold,
            )
        rows.append(row)

    path = output_dir / "ablation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fptr:
        writer = csv.DictWriter(
            fptr, fieldnames=ABLATION_CSV_COLUMNS, lineterminator="\n", restval=""
        )
        writer.writeheader()
        writer.writerows(rows)
    LOGGER.info("Wrote %d ablation rows to %s", len(rows), path)
    return rows
