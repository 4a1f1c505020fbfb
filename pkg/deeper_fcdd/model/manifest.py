"""Define dataset manifest records."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

from deeper_fcdd.const import LABEL_ANOMALOUS, LABEL_NORMAL, SPLITS
from deeper_fcdd.errors import DataError

MANIFEST_COLUMNS = ("image_id", "path", "class", "label", "split", "hazard_weight")


@dataclass(frozen=True)
class ManifestRecord:
    """Define one image of a dataset."""

    image_id: str
    path: str
    class_name: str
    label: int
    split: Optional[str] = None
    hazard_weight: float = 1.0

    def __post_init__(self) -> None:
        """Validate the record."""
        if self.label not in (LABEL_NORMAL, LABEL_ANOMALOUS):
            raise DataError(f"Image '{self.image_id}' has label {self.label}")
        if self.split is not None and self.split not in SPLITS:
            raise DataError(f"Image '{self.image_id}' has unknown split '{self.split}'")
        if not self.hazard_weight > 0:
            raise DataError(
                f"Image '{self.image_id}' has hazard weight {self.hazard_weight}"
            )

    @property
    def stratum(self) -> tuple[str, int]:
        """Return the (class, label) stratum."""
        return (self.class_name, self.label)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ManifestRecord":
        """Create a record from a manifest CSV row."""
        return cls(
            image_id=data["image_id"],
            path=data["path"],
            class_name=data["class"],
            label=int(data["label"]),
            split=data.get("split") or None,
            hazard_weight=float(data.get("hazard_weight") or 1.0),
        )

    def as_dict(self) -> dict[str, Any]:
        """Return the manifest CSV row."""
        return {
            "image_id": self.image_id,
            "path": self.path,
            "class": self.class_name,
            "label": self.label,
            "split": self.split or "",
            "hazard_weight": repr(self.hazard_weight),
        }


@dataclass
class DatasetManifest:
    """Define an ordered set of records plus where they came from."""

    records: list[ManifestRecord]
    seed: Optional[int] = None
    source: str = ""
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        """Reject duplicate image ids."""
        seen: set[str] = set()
        duplicates = []
        for record in self.records:
            if record.image_id in seen:
                duplicates.append(record.image_id)
            seen.add(record.image_id)
        if duplicates:
            raise DataError(
                f"Duplicate image ids: {', '.join(sorted(set(duplicates)))}"
            )

    def __iter__(self) -> Iterator[ManifestRecord]:
        """Iterate over records."""
        return iter(self.records)

    def __len__(self) -> int:
        """Return the number of records."""
        return len(self.records)

    @property
    def class_names(self) -> list[str]:
        """Return the distinct class names, sorted."""
        return sorted({record.class_name for record in self.records})

    @property
    def labels(self) -> list[int]:
        """Return every label in order."""
        return [record.label for record in self.records]

    def with_records(self, records: Iterable[ManifestRecord]) -> "DatasetManifest":
        """Return a manifest with the same provenance and other records."""
        return replace(self, records=list(records))

    def select(
        self, split: Optional[str] = None, class_name: Optional[str] = None
    ) -> "DatasetManifest":
        """Return the records of one split and/or class, order kept."""
        return self.with_records(
            record
            for record in self.records
            if (split is None or record.split == split)
            and (class_name is None or record.class_name == class_name)
        )

    def resolve(self, record: ManifestRecord) -> Path:
        """Return the absolute path of a record's image."""
        return self.root / record.path
