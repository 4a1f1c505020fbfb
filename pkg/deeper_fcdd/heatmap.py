"""Define Gaussian receptive-field upsampling and heatmap rendering."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from deeper_fcdd.const import DEFAULT_FAST_TRUNCATE, DEFAULT_QUARTILE, LABEL_ANOMALOUS
from deeper_fcdd.errors import RejectedInputError
from deeper_fcdd.model.geometry import FieldGeometry
from deeper_fcdd.objective import AnomalyMap

UPSAMPLE_MODES = ("reference", "fast")
HISTOGRAM_CSV_COLUMNS = ("bin_lo", "bin_hi", "normal_count", "anomalous_count")


@dataclass
class Heatmap:
    """Define a full-resolution anomaly heatmap."""

    values: np.ndarray
    image_id: str = ""
    delta: float = 0.0


@dataclass(frozen=True)
class DisplayRange:
    """Define the value interval a rendered heatmap spans."""

    lo: float
    hi: float
    quartile: float = DEFAULT_QUARTILE

    def __post_init__(self) -> None:
        """Validate the interval."""
        if not self.lo < self.hi:
            raise RejectedInputError(
                f"Display range needs lo < hi, got [{self.lo}, {self.hi}]"
            )


@lru_cache(maxsize=1)
def load_colormap() -> np.ndarray:
    """Return the shipped 256-entry blue-to-red lookup table as uint8."""
    source = resources.files("deeper_fcdd").joinpath("colormap.json").read_text()
    table = np.array(json.loads(source)["entries"], dtype=np.uint8)
    assert table.shape == (256, 3)
    return table


def gaussian2d(
    a1: float,
    a2: float,
    delta: float,
    x: Union[float, np.ndarray],
    y: Union[float, np.ndarray],
) -> Union[float, np.ndarray]:
    """Return the isotropic 2-D Gaussian density centered at (a1, a2)."""
    if not delta > 0:
        raise RejectedInputError(f"delta must be > 0, got {delta}")
    squared = (np.asarray(x) - a1) ** 2 + (np.asarray(y) - a2) ** 2
    return np.exp(-squared / (2.0 * delta * delta)) / (2.0 * math.pi * delta * delta)


def _window(center: float, radius: float, size: int) -> tuple[int, int]:
    """Return the pixel span [start, stop) within radius of a center."""
    start = max(0, math.ceil(center - radius))
    return start, min(size, math.floor(center + radius) + 1)


def _axis_kernel(centers: np.ndarray, size: int, delta: float) -> np.ndarray:
    """Return unnormalized Gaussians, one row per pixel and one column per center."""
    offsets = np.arange(size, dtype=np.float64)[:, None] - centers[None, :]
    return np.exp(-(offsets * offsets) / (2.0 * delta * delta))


def upsample(
    anomaly_map: AnomalyMap,
    geometry: FieldGeometry,
    delta: Optional[float] = None,
    *,
    mode: str = "reference",
    truncate: float = DEFAULT_FAST_TRUNCATE,
) -> Heatmap:
    """Return the full-resolution heatmap: Σ_q q · G(center(q), δ).

    The reference mode evaluates every Gaussian over the whole grid. The fast mode
    only deposits each Gaussian inside a square of half-width ``truncate`` · δ.
    """
    delta = geometry.default_delta if delta is None else delta
    if not delta > 0:
        raise RejectedInputError(f"delta must be > 0, got {delta}")
    if anomaly_map.dims != tuple(geometry.out_dims):
        raise RejectedInputError(
            f"Map dims {anomaly_map.dims} != geometry out dims {geometry.out_dims}"
        )
    if mode not in UPSAMPLE_MODES:
        raise RejectedInputError(f"Unknown upsample mode '{mode}'")

    height, width = geometry.in_dims
    row_centers, col_centers = geometry.centers()
    values = np.asarray(anomaly_map.values, dtype=np.float64)
    norm = 1.0 / (2.0 * math.pi * delta * delta)

    if mode == "reference":
        # The Gaussian is separable, so the full sum is a pair of matrix products.
        rows = _axis_kernel(row_centers, height, delta)
        cols = _axis_kernel(col_centers, width, delta)
        result = norm * (rows @ values @ cols.T)
    else:
        result = np.zeros((height, width), dtype=np.float64)
        radius = truncate * delta
        two_var = 2.0 * delta * delta
        for x, y in zip(*np.nonzero(values)):
            c1, c2 = row_centers[x], col_centers[y]
            top, bottom = _window(c1, radius, height)
            left, right = _window(c2, radius, width)
            if top >= bottom or left >= right:
                continue
            row_part = np.exp(-((np.arange(top, bottom) - c1) ** 2) / two_var)
            col_part = np.exp(-((np.arange(left, right) - c2) ** 2) / two_var)
            result[top:bottom, left:right] += (values[x, y] * norm) * np.outer(
                row_part, col_part
            )

    return Heatmap(result, anomaly_map.image_id, delta)


def _flatten_values(
    values: Union[np.ndarray, Iterable[Union[Heatmap, np.ndarray]]]
) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.ravel()
    parts = [
        np.ravel(item.values if isinstance(item, Heatmap) else item) for item in values
    ]
    return np.concatenate(parts) if parts else np.empty(0)


def display_range(
    values: Union[np.ndarray, Iterable[Union[Heatmap, np.ndarray]]],
    quartile: float = DEFAULT_QUARTILE,
) -> DisplayRange:
    """Return [min, max · quartile] over every value of the rendered set.

    Falls back to [min, max] when the scaled maximum does not exceed the minimum,
    and to [min, min + 1] for a constant collection.
    """
    if not 0 < quartile <= 1:
        raise RejectedInputError(f"quartile must lie in (0, 1], got {quartile}")
    flat = _flatten_values(values)
    if flat.size == 0:
        raise RejectedInputError("Display range needs at least one value")

    lo = float(flat.min())
    top = float(flat.max())
    hi = top * quartile
    if hi <= lo:
        hi = top
    if hi <= lo:
        hi = lo + 1.0
    return DisplayRange(lo, hi, quartile)


def colormap_index(values: np.ndarray, display: DisplayRange) -> np.ndarray:
    """Return the lookup-table index of every value."""
    position = np.clip((values - display.lo) / (display.hi - display.lo), 0.0, 1.0)
    return np.floor(position * 255.0 + 0.5).astype(np.intp)


def render(heatmap: Heatmap, display: DisplayRange) -> np.ndarray:
    """Return an h x w x 3 uint8 image: blue at or below lo, red at or above hi."""
    return load_colormap()[colormap_index(np.asarray(heatmap.values), display)]


def overlay(raw: np.ndarray, rendered: np.ndarray, alpha: float) -> np.ndarray:
    """Return (1 − alpha) · raw + alpha · rendered, rounded half-up."""
    if raw.shape != rendered.shape:
        raise RejectedInputError(
            f"Overlay dims differ: {raw.shape} vs {rendered.shape}"
        )
    if not 0 <= alpha <= 1:
        raise RejectedInputError(f"alpha must lie in [0, 1], got {alpha}")
    mixed = (1.0 - alpha) * raw.astype(np.float64) + alpha * rendered.astype(np.float64)
    return np.floor(mixed + 0.5).astype(np.uint8)


@dataclass
class ScoreHistogram:
    """Define per-label counts over shared bin edges."""

    edges: np.ndarray
    normal_counts: np.ndarray
    anomalous_counts: np.ndarray

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Write one row per bin."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fptr:
            writer = csv.writer(fptr, lineterminator="\n")
            writer.writerow(HISTOGRAM_CSV_COLUMNS)
            for index in range(len(self.normal_counts)):
                writer.writerow(
                    (
                        repr(float(self.edges[index])),
                        repr(float(self.edges[index + 1])),
                        int(self.normal_counts[index]),
                        int(self.anomalous_counts[index]),
                    )
                )
        return path


def histogram(scores: Sequence[tuple[float, int]], bins: int) -> ScoreHistogram:
    """Return normal and anomalous counts over bins spanning every score."""
    if bins < 1:
        raise RejectedInputError(f"bins must be >= 1, got {bins}")
    if not scores:
        raise RejectedInputError("Histogram needs at least one score")

    values = np.array([score for score, _ in scores], dtype=np.float64)
    labels = np.array([label for _, label in scores])
    edges = np.histogram_bin_edges(values, bins=bins)
    normal, _ = np.histogram(values[labels != LABEL_ANOMALOUS], bins=edges)
    anomalous, _ = np.histogram(values[labels == LABEL_ANOMALOUS], bins=edges)
    return ScoreHistogram(edges, normal, anomalous)


def mass_inside(heatmap: Heatmap, mask: np.ndarray, radius: float = 0.0) -> float:
    """Return the share of heatmap mass inside a mask dilated by a disk of radius."""
    values = np.asarray(heatmap.values)
    if mask.shape != values.shape:
        raise RejectedInputError(
            f"Mask dims {mask.shape} != heatmap dims {values.shape}"
        )
    region = mask.astype(bool)
    reach = int(math.floor(radius))
    if reach > 0:
        offsets = np.arange(-reach, reach + 1)
        disk = offsets[:, None] ** 2 + offsets[None, :] ** 2 <= radius * radius
        region = ndimage.binary_dilation(region, structure=disk)
    total = float(values.sum())
    return float(values[region].sum()) / total if total > 0 else 0.0


def write_png(path: Union[str, Path], rgb: np.ndarray) -> Path:
    """Write an 8-bit RGB (or grayscale) array as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")
    return path


def write_pfm(path: Union[str, Path], values: np.ndarray) -> Path:
    """Write a grayscale portable float map.

    Samples are little-endian float32, bottom row first.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(np.flipud(values), dtype="<f4").tobytes()
    path.write_bytes(header + body)
    return path


def read_pfm(path: Union[str, Path]) -> np.ndarray:
    """Read a grayscale portable float map."""
    payload = Path(path).read_bytes()
    kind, dims, scale, body = payload.split(b"\n", 3)
    if kind != b"Pf":
        raise RejectedInputError(f"{path} is not a grayscale PFM")
    width, height = (int(value) for value in dims.split())
    dtype = "<f4" if float(scale) < 0 else ">f4"
    values = np.frombuffer(body, dtype=dtype, count=width * height)
    return np.flipud(values.reshape(height, width)).astype(np.float32)
