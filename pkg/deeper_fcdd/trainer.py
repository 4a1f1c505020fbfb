"""Define the deeper-FCDD training loop."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import time
from typing import Any, Optional, Sequence, Union

import numpy as np

from deeper_fcdd.backbone import Backbone, BackboneSpec, build
from deeper_fcdd.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from deeper_fcdd.config import RunConfig
from deeper_fcdd.const import (
    EVENT_CHECKPOINT_SAVED,
    EVENT_DEGENERATE_MAP,
    EVENT_EPOCH_COMPLETED,
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    LOGGER,
    SPLIT_CAL,
    SPLIT_TRAIN,
)
from deeper_fcdd.errors import (
    CheckpointError,
    ConfigError,
    NumericFailure,
    UndefinedMetricError,
)
from deeper_fcdd.event import EventBase
from deeper_fcdd.images import ImageLoader, standardize
from deeper_fcdd.metrics import roc_auc
from deeper_fcdd.model.geometry import FieldGeometry
from deeper_fcdd.model.history import EpochRecord, TrainHistory
from deeper_fcdd.model.manifest import DatasetManifest, ManifestRecord
from deeper_fcdd.objective import (
    AnomalyMap,
    fcdd_loss_terms,
    image_score,
    pseudo_huber,
    pseudo_huber_backward,
    pseudo_huber_map,
)
from deeper_fcdd.optim import AdamState, adam_step

CHECKPOINT_DIR = "checkpoints"
BEST_CHECKPOINT = "best.fcdd"
ADAM_M_PREFIX = "adam.m."
ADAM_V_PREFIX = "adam.v."


def epoch_checkpoint_name(epoch: int) -> str:
    """Return the file name of an epoch's checkpoint."""
    return f"epoch-{epoch:03d}.fcdd"


def anomaly_maps(
    backbone: Backbone, images: np.ndarray, image_ids: Sequence[str]
) -> list[AnomalyMap]:
    """Return the pseudo-Huber map of every loader image."""
    return pseudo_huber_map(backbone.forward(standardize(images)), image_ids)


def load_backbone(
    path: Union[str, Path],
    config: Optional[RunConfig] = None,
) -> tuple[Backbone, Checkpoint]:
    """Return the backbone stored in a checkpoint.

    With a config, the stored spec must equal the one the config selects.
    """
    checkpoint = load_checkpoint(path)
    try:
        spec = BackboneSpec.from_dict(checkpoint.backbone)
    except (ConfigError, KeyError, TypeError, ValueError) as err:
        raise CheckpointError(
            f"Checkpoint {path} holds an invalid backbone: {err}"
        ) from err
    dtype = np.float64
    if config is not None:
        expected = config.backbone_spec()
        if expected.as_dict() != spec.as_dict():
            raise CheckpointError(
                f"Checkpoint {path} was trained with backbone '{spec.name}', "
                f"which does not match the configured '{expected.name}'"
            )
        dtype = np.dtype(config.precision)
    backbone = Backbone.from_blobs(spec, checkpoint.blobs, dtype=dtype)
    if "geometry" in checkpoint.meta:
        try:
            stored = FieldGeometry.from_dict(checkpoint.meta["geometry"])
        except (KeyError, TypeError, ValueError) as err:
            raise CheckpointError(
                f"Checkpoint {path} holds an invalid geometry: {err}"
            ) from err
        if stored != backbone.geometry:
            raise CheckpointError(
                f"Checkpoint {path} records a receptive-field geometry that its "
                "backbone does not have"
            )
    return backbone, checkpoint


@dataclass
class TrainResult:
    """Define what a training run leaves behind."""

    backbone: Backbone
    history: TrainHistory
    last_checkpoint: Optional[Path]
    best_checkpoint: Optional[Path]
    best_epoch: int
    best_auc: Optional[float]


class Trainer(EventBase):  # pylint: disable=too-many-instance-attributes
    """Define a training run over the train split of a manifest."""

    def __init__(
        self,
        config: RunConfig,
        manifest: DatasetManifest,
        *,
        output_dir: Union[str, Path, None] = None,
    ) -> None:
        """Initialize."""
        super().__init__()
        self.config = config
        self.manifest = manifest
        self.output_dir = Path(output_dir or config.output_dir)
        self.spec = config.backbone_spec()
        self.loader = ImageLoader(
            manifest,
            config.input_size,
            in_channels=config.in_channels,
            dtype=config.precision,
            workers=1 if config.deterministic else config.workers,
            cache=config.cache_images,
        )

        self.backbone: Optional[Backbone] = None
        self.state: Optional[AdamState] = None
        self.history = TrainHistory()
        self.best_auc: Optional[float] = None
        self.best_epoch = 0

    @property
    def checkpoint_dir(self) -> Path:
        """Return where checkpoints are written."""
        return self.output_dir / CHECKPOINT_DIR

    def _train_records(self) -> list[ManifestRecord]:
        if any(record.split is None for record in self.manifest):
            raise ConfigError("Manifest has not been split")
        records = self.manifest.select(split=SPLIT_TRAIN).records
        labels = {record.label for record in records}
        if labels != {LABEL_NORMAL, LABEL_ANOMALOUS}:
            raise ConfigError(
                f"Train split must hold normal and anomalous images, got labels "
                f"{sorted(labels)} over {len(records)} images"
            )
        return records

    def _initialize(self) -> None:
        self.backbone = build(
            self.spec, seed=self.config.seed, dtype=self.config.precision
        )
        self.state = AdamState.for_params(
            self.backbone.parameters(),
            lr=self.config.lr,
            beta1=self.config.beta1,
            beta2=self.config.beta2,
            epsilon=self.config.epsilon,
        )

    def resume(self, path: Union[str, Path]) -> None:
        """Restore parameters, Adam state and history from a checkpoint."""
        self.backbone, checkpoint = load_backbone(path, self.config)
        params = self.backbone.parameters()
        try:
            self.state = AdamState(
                **checkpoint.meta["adam"],
                m={name: checkpoint.blobs[ADAM_M_PREFIX + name] for name in params},
                v={name: checkpoint.blobs[ADAM_V_PREFIX + name] for name in params},
            )
            self.history = TrainHistory.from_list(checkpoint.meta["history"])
        except (KeyError, TypeError, ValueError) as err:
            raise CheckpointError(
                f"Checkpoint {path} cannot be resumed: {err}"
            ) from err
        self.best_auc = checkpoint.meta.get("best_auc")
        self.best_epoch = int(checkpoint.meta.get("best_epoch", 0))
        LOGGER.info("Resuming from %s after epoch %d", path, self.history.last_epoch)

    def _checkpoint(self) -> Checkpoint:
        assert self.backbone and self.state
        blobs = self.backbone.to_blobs()
        for name in self.backbone.parameters():
            blobs[ADAM_M_PREFIX + name] = self.state.m[name]
        for name in self.backbone.parameters():
            blobs[ADAM_V_PREFIX + name] = self.state.v[name]
        meta: dict[str, Any] = {
            "adam": self.state.hyper(),
            "best_auc": self.best_auc,
            "best_epoch": self.best_epoch,
            "epoch": self.history.last_epoch,
            "geometry": self.backbone.geometry.as_dict(),
            "history": self.history.as_list(wall=False),
            "precision": self.config.precision,
            "score_reduction": self.config.score_reduction,
            "seed": self.config.seed,
            "selection": "best calibration AUC, earliest epoch on ties",
        }
        return Checkpoint(blobs=blobs, backbone=self.spec.as_dict(), meta=meta)

    def _train_batch(
        self, records: Sequence[ManifestRecord], epoch: int, index: int
    ) -> tuple[float, int]:
        assert self.backbone and self.state
        batch = self.loader.load_batch(records)
        out, contexts = self.backbone.forward_with_context(standardize(batch.images))
        terms = fcdd_loss_terms(pseudo_huber(out), batch.labels)
        if not np.isfinite(terms.loss):
            raise NumericFailure(
                f"Loss is {terms.loss} at epoch {epoch}, batch {index}"
            )

        upstream = pseudo_huber_backward(out, terms.grad)
        _, grads = self.backbone.backward(contexts, upstream)
        params, self.state = adam_step(self.backbone.parameters(), grads, self.state)
        if not all(np.isfinite(value).all() for value in params.values()):
            raise NumericFailure(
                f"Parameters became non-finite at epoch {epoch}, batch {index}"
            )
        self.backbone.set_parameters(params)

        if terms.clamp_events:
            self.emit(
                EVENT_DEGENERATE_MAP,
                {"epoch": epoch, "batch": index, "count": terms.clamp_events},
            )
        LOGGER.debug("Epoch %d batch %d: loss %.6f", epoch, index, terms.loss)
        return terms.loss, terms.clamp_events

    def calibration_auc(self) -> Optional[float]:
        """Return the ROC-AUC on the calibration split, None when undefined."""
        assert self.backbone
        records = self.manifest.select(split=SPLIT_CAL).records
        scores = []
        for start in range(0, len(records), self.config.batch_size):
            chunk = records[start : start + self.config.batch_size]
            batch = self.loader.load_batch(chunk)
            maps = anomaly_maps(self.backbone, batch.images, batch.image_ids)
            scores.extend(
                image_score(anomaly_map, self.config.score_reduction)
                for anomaly_map in maps
            )
        try:
            return roc_auc(scores, [record.label for record in records])
        except UndefinedMetricError:
            return None

    def _save(self, name: str, epoch: int, best: bool) -> Path:
        path = save_checkpoint(self.checkpoint_dir / name, self._checkpoint())
        self.emit(EVENT_CHECKPOINT_SAVED, {"path": path, "epoch": epoch, "best": best})
        return path

    def run(self, resume: Union[str, Path, None] = None) -> TrainResult:
        """Train until the configured epoch count; return the run's outcome."""
        records = self._train_records()
        if resume is not None:
            self.resume(resume)
        else:
            self._initialize()
        assert self.backbone

        last_path: Optional[Path] = None
        best_path: Optional[Path] = None
        size = self.config.batch_size

        with self.backbone.exclusive():
            for epoch in range(self.history.last_epoch + 1, self.config.epochs + 1):
                started = time.perf_counter()
                rng = np.random.default_rng([self.config.seed, epoch])
                order = rng.permutation(len(records))

                total_loss = 0.0
                clamp_events = 0
                for index, start in enumerate(range(0, len(order), size)):
                    chunk = [records[pick] for pick in order[start : start + size]]
                    loss, clamps = self._train_batch(chunk, epoch, index)
                    total_loss += loss * len(chunk)
                    clamp_events += clamps

                cal_auc = self.calibration_auc()
                beats_best = cal_auc is not None and (
                    self.best_auc is None or cal_auc > self.best_auc
                )
                improved = self.best_epoch == 0 or beats_best
                if improved:
                    self.best_auc = cal_auc
                    self.best_epoch = epoch

                record = EpochRecord(
                    epoch=epoch,
                    mean_train_loss=total_loss / len(records),
                    cal_auc=cal_auc,
                    wall_seconds=time.perf_counter() - started,
                    clamp_events=clamp_events,
                )
                self.history.append(record)
                last_path = self._save(epoch_checkpoint_name(epoch), epoch, False)
                if improved:
                    best_path = self._save(BEST_CHECKPOINT, epoch, True)
                self.history.write_csv(self.output_dir / "history.csv")

                LOGGER.info(
                    "Epoch %d/%d: mean loss %.6f, calibration AUC %s",
                    epoch,
                    self.config.epochs,
                    record.mean_train_loss,
                    "n/a" if cal_auc is None else f"{cal_auc:.4f}",
                )
                self.emit(EVENT_EPOCH_COMPLETED, record)

        if best_path is None and (self.checkpoint_dir / BEST_CHECKPOINT).is_file():
            best_path = self.checkpoint_dir / BEST_CHECKPOINT
        return TrainResult(
            backbone=self.backbone,
            history=self.history,
            last_checkpoint=last_path,
            best_checkpoint=best_path,
            best_epoch=self.best_epoch,
            best_auc=self.best_auc,
        )


def train(
    config: RunConfig,
    manifest: DatasetManifest,
    *,
    output_dir: Union[str, Path, None] = None,
    resume: Union[str, Path, None] = None,
) -> TrainResult:
    """Train a backbone on a split manifest."""
    return Trainer(config, manifest, output_dir=output_dir).run(resume)
