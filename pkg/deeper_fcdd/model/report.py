"""Define the metrics report."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
import json
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Union

REPORT_CSV_COLUMNS = (
    "auc",
    "f1",
    "precision",
    "recall",
    "threshold",
    "tp",
    "fp",
    "tn",
    "fn",
    "n_test",
    "seed",
    "config_digest",
)


def _encode_float(value: Optional[float]) -> Union[float, str, None]:
    if value is None or math.isfinite(value):
        return value
    return "inf" if value > 0 else "-inf"


@dataclass
class MetricsReport:
    """Define test-split metrics at a calibrated threshold."""

    f1: float
    precision: float
    recall: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    auc: Optional[float] = None
    config_digest: str = ""
    undefined: list[str] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    per_class: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def n_test(self) -> int:
        """Return the number of scored test images."""
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricsReport":
        """Create a report from its JSON form."""
        names = {item.name for item in fields(cls)}
        values = {key: value for key, value in data.items() if key in names}
        values["threshold"] = float(values["threshold"])
        return cls(**values)

    def as_dict(self) -> dict[str, Any]:
        """Return the JSON form."""
        return {
            "auc": self.auc,
            "config_digest": self.config_digest,
            "f1": self.f1,
            "fn": self.fn,
            "fp": self.fp,
            "meta": self.meta,
            "n_test": self.n_test,
            "per_class": self.per_class,
            "precision": self.precision,
            "recall": self.recall,
            "threshold": _encode_float(self.threshold),
            "tn": self.tn,
            "tp": self.tp,
            "undefined": self.undefined,
        }

    def as_row(self) -> dict[str, Any]:
        """Return the aggregation CSV row."""
        data = self.as_dict()
        data["seed"] = self.meta.get("seed", "")
        return {column: data[column] for column in REPORT_CSV_COLUMNS}

    def write_json(self, path: Union[str, Path]) -> Path:
        """Write the report as canonical JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "MetricsReport":
        """Read a report written by write_json."""
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_report_csv(path: Union[str, Path], reports: Iterable[MetricsReport]) -> Path:
    """Write one aggregation row per report."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fptr:
        writer = csv.DictWriter(
            fptr, fieldnames=REPORT_CSV_COLUMNS, lineterminator="\n"
        )
        writer.writeheader()
        for report in reports:
            writer.writerow(report.as_row())
    return path
