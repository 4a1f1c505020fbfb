"""Define a seeded desk-scale corpus of textured images with blob anomalies."""
from __future__ import annotations

from dataclasses import asdict, dataclass
import math
from pathlib import Path
from typing import Any, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from deeper_fcdd.const import GROUND_TRUTH_DIR, LABEL_ANOMALOUS, LABEL_DIRS, LOGGER
from deeper_fcdd.errors import ConfigError
from deeper_fcdd.model.manifest import DatasetManifest, ManifestRecord

NOISE_CELL = 8
BLOB_COLORS = ((1.0, 0.15, 0.1), (1.0, 0.95, 0.2), (0.1, 0.1, 0.1))


@dataclass(frozen=True)
class SyntheticSpec:
    """Define a synthetic corpus; counts are per class."""

    n_normal: int = 100
    n_anomalous: int = 50
    image_size: tuple[int, int] = (64, 64)
    blob_count: tuple[int, int] = (1, 3)
    blob_radius: tuple[float, float] = (4.0, 9.0)
    noise_level: float = 0.15
    seed: int = 0
    class_names: tuple[str, ...] = ("synthetic",)

    def __post_init__(self) -> None:
        """Validate the spec."""
        if self.n_normal < 0 or self.n_anomalous < 0:
            raise ConfigError(
                f"Counts must be >= 0, got {self.n_normal}:{self.n_anomalous}"
            )
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"Invalid image size {self.image_size}")
        low, high = self.blob_count
        if not 1 <= low <= high:
            raise ConfigError(
                f"Blob count range must satisfy 1 <= lo <= hi, got {self.blob_count}"
            )
        low, high = self.blob_radius
        if not 0 < low <= high:
            raise ConfigError(
                f"Blob radius range must satisfy 0 < lo <= hi, got {self.blob_radius}"
            )
        if self.noise_level < 0:
            raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")
        if not self.class_names or len(set(self.class_names)) != len(self.class_names):
            raise ConfigError(
                f"Class names must be unique and non-empty: {self.class_names}"
            )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SyntheticSpec":
        """Create a spec from a plain dict; unknown keys are rejected."""
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown synthetic keys: {', '.join(sorted(unknown))}")
        values = dict(data)
        for key in ("image_size", "blob_count", "blob_radius", "class_names"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)

    def as_dict(self) -> dict[str, Any]:
        """Return a JSON-ready dict."""
        return {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in asdict(self).items()
        }


def _value_noise(rng: np.random.Generator, size: tuple[int, int]) -> np.ndarray:
    """Return smooth h x w x 3 noise in [0, 1] interpolated from a coarse grid."""
    height, width = size
    coarse = rng.random((height // NOISE_CELL + 2, width // NOISE_CELL + 2, 3))
    factors = (
        (height + NOISE_CELL) / coarse.shape[0],
        (width + NOISE_CELL) / coarse.shape[1],
        1,
    )
    smooth = ndimage.zoom(coarse, factors, order=3, mode="nearest")
    return np.clip(smooth[:height, :width], 0.0, 1.0)


def background(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    """Return a textured h x w x 3 float background."""
    texture = _value_noise(rng, spec.image_size) - 0.5
    grain = rng.normal(0.0, 1.0, (*spec.image_size, 3))
    base = np.array([0.45, 0.5, 0.4]) + rng.uniform(-0.05, 0.05, 3)
    return np.clip(base + spec.noise_level * (texture + 0.25 * grain), 0.0, 1.0)


def blob_mask(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    """Return the boolean union of 1..blob_count irregular blobs."""
    height, width = spec.image_size
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1)):
        radius = rng.uniform(*spec.blob_radius)
        center_row = rng.uniform(0, height - 1)
        center_col = rng.uniform(0, width - 1)
        lobes = rng.integers(2, 6)
        phase = rng.uniform(0, 2 * math.pi)
        wobble = rng.uniform(0.15, 0.35)

        angle = np.arctan2(rows - center_row, cols - center_col)
        reach = radius * (1.0 + wobble * np.sin(lobes * angle + phase))
        blob = np.hypot(rows - center_row, cols - center_col) <= reach
        # Keep at least the center pixel so small radii never yield empty blobs.
        blob[int(round(center_row)), int(round(center_col))] = True
        mask |= blob
    return mask


def _save(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")


def synth(spec: SyntheticSpec, root: Union[str, Path]) -> DatasetManifest:
    """Write the corpus under root/<class>/{normal,anomalous} and return its manifest.

    Anomalous images get a ground-truth mask at root/<class>/ground_truth/<stem>.png.
    Every image draws from its own seeded generator.
    """
    root = Path(root)
    records = []
    for class_index, class_name in enumerate(spec.class_names):
        for label_dir, label in sorted(LABEL_DIRS.items()):
            count = spec.n_anomalous if label == LABEL_ANOMALOUS else spec.n_normal
            for index in range(count):
                rng = np.random.default_rng([spec.seed, class_index, label, index])
                pixels = background(rng, spec)
                stem = f"{label_dir}_{index:05d}"

                if label == LABEL_ANOMALOUS:
                    mask = blob_mask(rng, spec)
                    color = np.array(BLOB_COLORS[rng.integers(len(BLOB_COLORS))])
                    shade = rng.uniform(0.9, 1.0)
                    pixels[mask] = np.clip(color * shade, 0.0, 1.0)
                    _save(
                        root / class_name / GROUND_TRUTH_DIR / f"{stem}.png",
                        (mask * 255).astype(np.uint8),
                    )

                path = root / class_name / label_dir / f"{stem}.png"
                _save(path, np.floor(pixels * 255.0 + 0.5).astype(np.uint8))
                records.append(
                    ManifestRecord(
                        image_id=f"{class_name}/{label_dir}/{stem}",
                        path=path.relative_to(root).as_posix(),
                        class_name=class_name,
                        label=label,
                    )
                )

    records.sort(key=lambda record: record.path)
    LOGGER.info(
        "Synthesized %d images in %d classes under %s",
        len(records),
        len(spec.class_names),
        root,
    )
    return DatasetManifest(records, seed=spec.seed, source="synthetic", root=root)
