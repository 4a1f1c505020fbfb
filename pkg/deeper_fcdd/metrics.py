"""Define ROC-AUC, threshold calibration and confusion metrics."""
from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np

from deeper_fcdd.const import (
    AUC_PAIR_COUNT_LIMIT,
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    LOGGER,
)
from deeper_fcdd.errors import RejectedInputError, UndefinedMetricError
from deeper_fcdd.model.report import MetricsReport

CALIBRATION_RULES = ("max_f1", "max_youden")


def _check(
    scores: Sequence[float], labels: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise RejectedInputError(f"{scores.shape} scores for {labels.shape} labels")
    if not np.all(np.isin(labels, (LABEL_NORMAL, LABEL_ANOMALOUS))):
        raise RejectedInputError("Labels must be 0 or 1")
    if np.isnan(scores).any():
        raise RejectedInputError("Scores contain NaN")
    return scores, labels


def _split_by_label(
    scores: Sequence[float], labels: Sequence[int], what: str
) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = _check(scores, labels)
    normal = scores[labels == LABEL_NORMAL]
    anomalous = scores[labels == LABEL_ANOMALOUS]
    if not len(normal) or not len(anomalous):
        raise UndefinedMetricError(
            f"{what} needs both classes; got {len(normal)} normal and "
            f"{len(anomalous)} anomalous"
        )
    return normal, anomalous


def roc_auc_pairs(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Return P(anomalous > normal) by counting pairs; ties earn half credit."""
    normal, anomalous = _split_by_label(scores, labels, "ROC-AUC")
    normal = np.sort(normal)
    below = np.searchsorted(normal, anomalous, side="left")
    ties = np.searchsorted(normal, anomalous, side="right") - below
    wins = 2 * int(below.sum()) + int(ties.sum())
    return wins / (2 * len(normal) * len(anomalous))


def roc_auc_trapezoidal(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Return the area under the ROC curve by trapezoidal integration."""
    normal, anomalous = _split_by_label(scores, labels, "ROC-AUC")
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="stable")
    ordered = scores[order]
    positive = (labels[order] == LABEL_ANOMALOUS).astype(np.int64)

    # One ROC point per distinct score, descending.
    last = np.r_[np.nonzero(np.diff(ordered))[0], len(ordered) - 1]
    tps = np.r_[0, np.cumsum(positive)[last]]
    fps = np.r_[0, np.cumsum(1 - positive)[last]]
    doubled_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return doubled_area / (2 * len(normal) * len(anomalous))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Return ROC-AUC: exact pair counting up to 10^4 scores, trapezoidal above."""
    if len(scores) <= AUC_PAIR_COUNT_LIMIT:
        return roc_auc_pairs(scores, labels)
    return roc_auc_trapezoidal(scores, labels)


def cut_points(scores: Sequence[float]) -> np.ndarray:
    """Return −inf, every midpoint between adjacent distinct scores, and +inf."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    middles = (distinct[:-1] + distinct[1:]) / 2.0
    return np.r_[-np.inf, middles, np.inf]


def _counts_at(
    normal: np.ndarray, anomalous: np.ndarray, thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return tp, fp, tn, fn per threshold under the score >= threshold rule."""
    normal = np.sort(normal)
    anomalous = np.sort(anomalous)
    fn = np.searchsorted(anomalous, thresholds, side="left")
    tn = np.searchsorted(normal, thresholds, side="left")
    return len(anomalous) - fn, len(normal) - tn, tn, fn


def _ratio(numerator: Any, denominator: Any) -> np.ndarray:
    numerator = np.asarray(numerator, dtype=np.float64)
    denominator = np.asarray(denominator, dtype=np.float64)
    out = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def calibrate_threshold(
    scores: Sequence[float], labels: Sequence[int], rule: str = "max_f1"
) -> float:
    """Return the cut-point maximizing F1 (or Youden's J) on a calibration split.

    Ties prefer higher recall, then the lower threshold.
    """
    if rule not in CALIBRATION_RULES:
        raise RejectedInputError(f"Unknown calibration rule '{rule}'")
    normal, anomalous = _split_by_label(scores, labels, "Threshold calibration")
    cuts = cut_points(np.r_[normal, anomalous])
    tp, fp, tn, fn = _counts_at(normal, anomalous, cuts)

    recall = _ratio(tp, tp + fn)
    if rule == "max_f1":
        objective = _ratio(2 * tp, 2 * tp + fp + fn)
    else:
        objective = recall - _ratio(fp, fp + tn)

    best = max(range(len(cuts)), key=lambda i: (objective[i], recall[i], -cuts[i]))
    LOGGER.debug(
        "Calibrated threshold %s (%s = %.6f, recall %.6f) over %d cut points",
        cuts[best],
        rule,
        objective[best],
        recall[best],
        len(cuts),
    )
    return float(cuts[best])


def confusion_metrics(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float,
    *,
    config_digest: str = "",
) -> MetricsReport:
    """Return counts and precision, recall and F1 at a threshold.

    An image is predicted anomalous iff its score >= threshold.

    A metric whose denominator is zero is reported as 0 and listed in ``undefined``.
    """
    scores, labels = _check(scores, labels)
    if not len(scores):
        raise RejectedInputError("Confusion metrics need a non-empty test set")

    predicted = scores >= threshold
    actual = labels == LABEL_ANOMALOUS
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))

    undefined = []
    if tp + fp == 0:
        undefined.append("precision")
    if tp + fn == 0:
        undefined.append("recall")
    if 2 * tp + fp + fn == 0:
        undefined.append("f1")
    if undefined:
        LOGGER.warning("Zero denominator for %s; reported as 0", ", ".join(undefined))

    return MetricsReport(
        f1=float(_ratio(2 * tp, 2 * tp + fp + fn)),
        precision=float(_ratio(tp, tp + fp)),
        recall=float(_ratio(tp, tp + fn)),
        threshold=float(threshold),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        config_digest=config_digest,
        undefined=undefined,
    )


def per_class_metrics(
    scores: Sequence[float],
    labels: Sequence[int],
    class_names: Sequence[str],
    threshold: float,
) -> dict[str, dict[str, Any]]:
    """Return AUC, F1, precision and recall per class at a shared threshold.

    AUC is None for a class whose test images carry a single label.
    """
    scores, labels = _check(scores, labels)
    names = np.asarray(class_names)
    breakdown: dict[str, dict[str, Any]] = {}
    for name in sorted(set(class_names)):
        chosen = names == name
        report = confusion_metrics(scores[chosen], labels[chosen], threshold)
        auc: Optional[float]
        try:
            auc = roc_auc(scores[chosen], labels[chosen])
        except UndefinedMetricError:
            auc = None
        breakdown[name] = {
            "auc": auc,
            "f1": report.f1,
            "precision": report.precision,
            "recall": report.recall,
            "n_test": report.n_test,
        }
    return breakdown
