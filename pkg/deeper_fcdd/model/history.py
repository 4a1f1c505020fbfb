"""Define per-epoch training history."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

HISTORY_CSV_COLUMNS = (
    "epoch",
    "mean_train_loss",
    "cal_auc",
    "wall_seconds",
    "clamp_events",
)


@dataclass(frozen=True)
class EpochRecord:
    """Define the outcome of one completed epoch."""

    epoch: int
    mean_train_loss: float
    cal_auc: Optional[float]
    wall_seconds: float = 0.0
    clamp_events: int = 0

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EpochRecord":
        """Create a record from a plain dict."""
        cal_auc = data.get("cal_auc")
        return cls(
            epoch=int(data["epoch"]),
            mean_train_loss=float(data["mean_train_loss"]),
            cal_auc=None if cal_auc in (None, "") else float(cal_auc),
            wall_seconds=float(data.get("wall_seconds") or 0.0),
            clamp_events=int(data.get("clamp_events") or 0),
        )

    def as_dict(self, *, wall: bool = True) -> dict[str, Any]:
        """Return a plain dict; ``wall=False`` drops the timing."""
        data: dict[str, Any] = {
            "epoch": self.epoch,
            "mean_train_loss": self.mean_train_loss,
            "cal_auc": self.cal_auc,
            "clamp_events": self.clamp_events,
        }
        if wall:
            data["wall_seconds"] = self.wall_seconds
        return data


@dataclass
class TrainHistory:
    """Define the ordered epochs of a training run."""

    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        """Add the next epoch; epochs must increase."""
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(
                f"Epoch {record.epoch} does not follow epoch {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        """Return the number of completed epochs."""
        return len(self.records)

    @property
    def last_epoch(self) -> int:
        """Return the last completed epoch, 0 before training."""
        return self.records[-1].epoch if self.records else 0

    @classmethod
    def from_list(cls, data: list[dict[str, Any]]) -> "TrainHistory":
        """Create a history from plain dicts."""
        history = cls()
        for item in data:
            history.append(EpochRecord.from_dict(item))
        return history

    def as_list(self, *, wall: bool = True) -> list[dict[str, Any]]:
        """Return plain dicts."""
        return [record.as_dict(wall=wall) for record in self.records]

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Write one row per epoch."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fptr:
            writer = csv.DictWriter(
                fptr, fieldnames=HISTORY_CSV_COLUMNS, lineterminator="\n"
            )
            writer.writeheader()
            for record in self.records:
                row = record.as_dict()
                row["mean_train_loss"] = repr(record.mean_train_loss)
                row["cal_auc"] = "" if record.cal_auc is None else repr(record.cal_auc)
                row["wall_seconds"] = f"{record.wall_seconds:.3f}"
                writer.writerow(row)
        return path
