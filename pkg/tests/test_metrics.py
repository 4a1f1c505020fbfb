"""Define tests for ROC-AUC, calibration and confusion metrics."""
import math

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from deeper_fcdd.errors import RejectedInputError, UndefinedMetricError
from deeper_fcdd.metrics import (
    calibrate_threshold,
    confusion_metrics,
    cut_points,
    per_class_metrics,
    roc_auc,
    roc_auc_pairs,
    roc_auc_trapezoidal,
)


def brute_auc(scores, labels):
    """Return the Mann-Whitney statistic by looping over every pair."""
    normal = [s for s, label in zip(scores, labels) if label == 0]
    anomalous = [s for s, label in zip(scores, labels) if label == 1]
    credit = sum(
        1.0 if a > n else 0.5 if a == n else 0.0 for a in anomalous for n in normal
    )
    return credit / (len(normal) * len(anomalous))


def recount(scores, labels, threshold):
    """Return tp, fp, tn, fn by a plain loop."""
    tp = fp = tn = fn = 0
    for score, label in zip(scores, labels):
        if score >= threshold:
            tp, fp = tp + (label == 1), fp + (label == 0)
        else:
            tn, fn = tn + (label == 0), fn + (label == 1)
    return tp, fp, tn, fn


def f1_at(scores, labels, threshold):
    """Return F1 by recount, 0 when undefined."""
    tp, fp, _, fn = recount(scores, labels, threshold)
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def random_case(rng, size, rounding=None):
    """Return random scores with both labels present."""
    scores = rng.normal(size=size)
    if rounding is not None:
        scores = np.round(scores, rounding)
    labels = rng.permutation([0, 1] * (size // 2))
    return scores.tolist(), labels.tolist()


def test_auc_examples():
    """Test separation and all-ties."""
    assert roc_auc([1.0, 2.0, 10.0, 11.0], [0, 0, 1, 1]) == 1.0
    assert roc_auc([10.0, 11.0, 1.0, 2.0], [0, 0, 1, 1]) == 0.0
    assert roc_auc([3.0] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


@pytest.mark.parametrize("rounding", [None, 1])
def test_auc_paths_agree(rng, rounding):
    """Test pair counting against the ROC integral and a brute-force oracle."""
    scores, labels = random_case(rng, 30, rounding)
    pairs = roc_auc_pairs(scores, labels)
    assert pairs == roc_auc_trapezoidal(scores, labels)
    assert pairs == pytest.approx(brute_auc(scores, labels), abs=1e-12)
    assert pairs == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def test_auc_switches_to_integration(rng):
    """Test the large-input path."""
    scores, labels = random_case(rng, 10_002, rounding=2)
    assert roc_auc(scores, labels) == roc_auc_pairs(scores, labels)


def test_auc_is_invariant_to_monotone_transforms(rng):
    """Test scaling, shifting and permutation."""
    scores, labels = random_case(rng, 40)
    base = roc_auc(scores, labels)
    scaled = roc_auc([3.7 * s + 1.0 for s in scores], labels)
    assert scaled == pytest.approx(base, abs=1e-12)
    order = rng.permutation(40)
    shuffled = roc_auc([scores[i] for i in order], [labels[i] for i in order])
    assert shuffled == base


def test_auc_needs_both_classes():
    """Test single-class and malformed inputs."""
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [0, 0])
    with pytest.raises(RejectedInputError):
        roc_auc([0.1, 0.2], [0, 2])
    with pytest.raises(RejectedInputError):
        roc_auc([0.1, 0.2], [0])
    with pytest.raises(RejectedInputError):
        roc_auc([0.1, math.nan], [0, 1])


def test_cut_points():
    """Test midpoints between distinct scores and the two infinities."""
    assert cut_points([2.0, 1.0, 2.0, 4.0]).tolist() == [-math.inf, 1.5, 3.0, math.inf]


def test_calibration_examples():
    """Test the separable case and the all-ties case."""
    assert calibrate_threshold([1.0, 2.0, 10.0, 11.0], [0, 0, 1, 1]) == 6.0
    assert calibrate_threshold([5.0] * 4, [0, 1, 0, 1]) == -math.inf
    with pytest.raises(UndefinedMetricError):
        calibrate_threshold([1.0, 2.0], [1, 1])
    with pytest.raises(RejectedInputError):
        calibrate_threshold([1.0, 2.0], [0, 1], rule="max_precision")


@pytest.mark.parametrize("rounding", [None, 1])
def test_calibration_matches_exhaustive_search(rng, rounding):
    """Test optimality and the tie-break against every cut-point."""
    scores, labels = random_case(rng, 20, rounding)
    threshold = calibrate_threshold(scores, labels)

    def key(cut):
        tp, _, _, fn = recount(scores, labels, cut)
        return (f1_at(scores, labels, cut), tp / (tp + fn), -cut)

    best = max(cut_points(scores).tolist(), key=key)
    assert threshold == best
    for cut in cut_points(scores):
        assert f1_at(scores, labels, threshold) >= f1_at(scores, labels, cut)


def test_youden_calibration():
    """Test the alternative rule on a separable case."""
    scores, labels = [1.0, 2.0, 10.0, 11.0], [0, 0, 1, 1]
    assert calibrate_threshold(scores, labels, "max_youden") == 6.0


def test_confusion_examples():
    """Test perfect separation and the predict-everything threshold."""
    perfect = confusion_metrics([1.0, 2.0, 10.0, 11.0], [0, 0, 1, 1], 6.0)
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
    assert perfect.n_test == 4

    everything = confusion_metrics([1.0, 2.0, 3.0, 11.0], [0, 0, 0, 1], -math.inf)
    assert everything.recall == 1.0
    assert everything.precision == 0.25
    assert everything.undefined == []


def test_confusion_zero_denominator(caplog):
    """Test that a metric without predictions is reported as 0 and flagged."""
    report = confusion_metrics([1.0, 2.0], [0, 1], math.inf, config_digest="abc")
    assert report.precision == 0.0
    assert report.undefined == ["precision"]
    assert report.config_digest == "abc"
    assert "Zero denominator" in caplog.text

    normal_only = confusion_metrics([1.0, 2.0], [0, 0], 1.5)
    assert normal_only.undefined == ["recall"]


def test_confusion_matches_recount(rng):
    """Test counts against a naive loop."""
    scores, labels = random_case(rng, 50, rounding=1)
    threshold = 0.3
    report = confusion_metrics(scores, labels, threshold)
    assert (report.tp, report.fp, report.tn, report.fn) == recount(
        scores, labels, threshold
    )
    assert report.auc is None
    with pytest.raises(RejectedInputError):
        confusion_metrics([], [], 0.0)


def test_per_class_metrics():
    """Test a breakdown where one class has a single label."""
    breakdown = per_class_metrics(
        [1.0, 9.0, 2.0, 8.0, 7.0],
        [0, 1, 0, 1, 1],
        ["fire", "fire", "flood", "flood", "smoke"],
        5.0,
    )
    assert sorted(breakdown) == ["fire", "flood", "smoke"]
    assert breakdown["fire"]["auc"] == 1.0
    assert breakdown["fire"]["f1"] == 1.0
    assert breakdown["smoke"]["auc"] is None
    assert breakdown["smoke"]["recall"] == 1.0
    assert breakdown["smoke"]["n_test"] == 1
