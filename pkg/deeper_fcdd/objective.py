"""Define the pseudo-Huber anomaly map, the deeper-FCDD loss and image scores."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from deeper_fcdd.const import LABEL_ANOMALOUS, LABEL_NORMAL, LOG_CLAMP_EPSILON, LOGGER
from deeper_fcdd.errors import RejectedInputError
from deeper_fcdd.numerics import Tensor4, check_tensor4

SCORE_REDUCTIONS = ("sum", "mean")
SCORE_CSV_COLUMNS = ("image_id", "label", "score", "hazard_weight", "weighted_score")


@dataclass
class AnomalyMap:
    """Define the u x v non-negative pseudo-Huber map of one image."""

    values: np.ndarray
    image_id: str = ""

    def __post_init__(self) -> None:
        """Validate the map."""
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise RejectedInputError(
                f"Anomaly map must be 2-D, got dims {self.values.shape}"
            )
        if np.any(self.values < 0):
            raise RejectedInputError(
                f"Anomaly map '{self.image_id}' has negative values"
            )

    @property
    def dims(self) -> tuple[int, int]:
        """Return (u, v)."""
        return self.values.shape


@dataclass
class LabeledBatch:
    """Define anomaly maps with their labels and hazard weights."""

    maps: list[AnomalyMap]
    labels: list[int]
    weights: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Validate lengths, labels and weights."""
        if not self.weights:
            self.weights = [1.0] * len(self.maps)
        if not len(self.maps) == len(self.labels) == len(self.weights):
            raise RejectedInputError(
                f"Batch lengths differ: {len(self.maps)} maps, {len(self.labels)} "
                f"labels, {len(self.weights)} weights"
            )
        if any(label not in (LABEL_NORMAL, LABEL_ANOMALOUS) for label in self.labels):
            raise RejectedInputError(f"Labels must be 0 or 1, got {self.labels}")
        if any(not weight > 0 for weight in self.weights):
            raise RejectedInputError("Hazard weights must be > 0")

    def stacked(self) -> np.ndarray:
        """Return the maps as one n x u x v array."""
        return np.stack([anomaly_map.values for anomaly_map in self.maps])


@dataclass
class LossTerms:
    """Define the loss value and its gradient with respect to the maps."""

    loss: float
    grad: np.ndarray
    clamp_events: int


def pseudo_huber(score_map: Tensor4) -> np.ndarray:
    """Return sqrt(||z||² + 1) − 1 per cell, the norm running over channels."""
    score_map = check_tensor4(score_map, "score map")
    squared = np.sum(score_map * score_map, axis=1)
    # sqrt(s + 1) − 1 rewritten so small norms keep full precision.
    return squared / (np.sqrt(squared + 1.0) + 1.0)


def pseudo_huber_map(
    score_map: Tensor4, image_ids: Optional[Sequence[str]] = None
) -> list[AnomalyMap]:
    """Return one AnomalyMap per image of an n x C x u x v score map."""
    values = pseudo_huber(score_map)
    ids = list(image_ids) if image_ids is not None else [""] * len(values)
    if len(ids) != len(values):
        raise RejectedInputError(f"{len(ids)} image ids for {len(values)} maps")
    return [AnomalyMap(value, image_id) for value, image_id in zip(values, ids)]


def pseudo_huber_backward(score_map: Tensor4, grad_maps: np.ndarray) -> Tensor4:
    """Return the gradient with respect to the score map given one per map cell."""
    score_map = check_tensor4(score_map, "score map")
    expected = (score_map.shape[0], *score_map.shape[2:])
    if grad_maps.shape != expected:
        raise RejectedInputError(f"Map gradient dims {grad_maps.shape} != {expected}")
    norm = np.sqrt(np.sum(score_map * score_map, axis=1, keepdims=True) + 1.0)
    return grad_maps[:, None] * score_map / norm


def fcdd_loss_terms(maps: np.ndarray, labels: Sequence[int]) -> LossTerms:
    """Return the deeper-FCDD loss over n x u x v maps and its gradient.

    Per image m_i is the mean map value. Normal images contribute m_i and anomalous
    images −log(1 − exp(−m_i)), the log argument clamped below at 1e-12; the loss
    averages over images.
    """
    maps = np.asarray(maps)
    labels = np.asarray(labels)
    if maps.ndim != 3 or len(maps) == 0:
        raise RejectedInputError(
            f"Loss needs a non-empty n x u x v batch, got {maps.shape}"
        )
    if labels.shape != (len(maps),):
        raise RejectedInputError(f"{labels.shape} labels for {len(maps)} maps")

    n = len(maps)
    cells = maps.shape[1] * maps.shape[2]
    means = maps.reshape(n, -1).mean(axis=1)
    anomalous = labels == LABEL_ANOMALOUS

    argument = -np.expm1(-means)
    clamped = anomalous & (argument < LOG_CLAMP_EPSILON)
    terms = np.where(anomalous, -np.log(np.maximum(argument, LOG_CLAMP_EPSILON)), means)

    with np.errstate(divide="ignore"):
        anomalous_slope = np.where(clamped, 0.0, -1.0 / np.expm1(means))
    slope = np.where(anomalous, anomalous_slope, 1.0)
    grad = np.broadcast_to((slope / (n * cells))[:, None, None], maps.shape).copy()

    clamp_events = int(clamped.sum())
    if clamp_events:
        LOGGER.warning(
            "Degenerate anomalous map: %d of %d anomalous images have a near-zero "
            "map; the log term was clamped",
            clamp_events,
            int(anomalous.sum()),
        )
    return LossTerms(float(terms.mean()), grad, clamp_events)


def fcdd_loss(batch: LabeledBatch) -> float:
    """Return the deeper-FCDD loss of a labeled batch."""
    if not batch.maps:
        raise RejectedInputError("Loss needs a non-empty batch")
    return fcdd_loss_terms(batch.stacked(), batch.labels).loss


def image_score(anomaly_map: AnomalyMap, reduction: str = "sum") -> float:
    """Return the sum (default) or mean of an anomaly map."""
    if reduction not in SCORE_REDUCTIONS:
        raise RejectedInputError(f"Unknown score reduction '{reduction}'")
    values = np.ascontiguousarray(anomaly_map.values)
    total = float(values.sum())
    return total if reduction == "sum" else total / values.size


def hazard_weighted_score(
    anomaly_map: AnomalyMap, h: float, reduction: str = "sum"
) -> float:
    """Return h times the image score."""
    if not h > 0:
        raise RejectedInputError(f"Hazard weight must be > 0, got {h}")
    return h * image_score(anomaly_map, reduction)


@dataclass(frozen=True)
class ScoreRow:
    """Define one line of a per-image score export."""

    image_id: str
    label: int
    score: float
    hazard_weight: float = 1.0

    @property
    def weighted_score(self) -> float:
        """Return the hazard-weighted score."""
        return self.hazard_weight * self.score

    def as_row(self) -> dict[str, Union[str, int, float]]:
        """Return the CSV row."""
        return {
            "image_id": self.image_id,
            "label": self.label,
            "score": repr(self.score),
            "hazard_weight": repr(self.hazard_weight),
            "weighted_score": repr(self.weighted_score),
        }


def write_score_csv(path: Union[str, Path], rows: Iterable[ScoreRow]) -> Path:
    """Write per-image scores as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fptr:
        writer = csv.DictWriter(fptr, fieldnames=SCORE_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_row())
    return path


def read_score_csv(path: Union[str, Path]) -> list[ScoreRow]:
    """Read a per-image score export."""
    with Path(path).open(newline="", encoding="utf-8") as fptr:
        return [
            ScoreRow(
                image_id=row["image_id"],
                label=int(row["label"]),
                score=float(row["score"]),
                hazard_weight=float(row["hazard_weight"]),
            )
            for row in csv.DictReader(fptr)
        ]
