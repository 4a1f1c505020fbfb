"""Define image decoding, bilinear resizing and batch loading."""
from __future__ import annotations

import asyncio
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from deeper_fcdd.const import DEFAULT_INPUT_SIZE, INPUT_MEAN, INPUT_SCALE, LOGGER
from deeper_fcdd.errors import DataError, RejectedInputError
from deeper_fcdd.model.manifest import DatasetManifest, ManifestRecord


def decode_image(path: Union[str, Path], in_channels: int = 3) -> np.ndarray:
    """Return the image at path as an h x w x C uint8 array (RGB or grayscale)."""
    if in_channels not in (1, 3):
        raise RejectedInputError(f"in_channels must be 1 or 3, got {in_channels}")
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert("RGB" if in_channels == 3 else "L"))
    except (OSError, UnidentifiedImageError, SyntaxError) as err:
        raise DataError(f"Cannot decode image {path}: {err}") from err
    return pixels.reshape(pixels.shape[0], pixels.shape[1], in_channels)


def resize_bilinear(image: np.ndarray, size: Sequence[int]) -> np.ndarray:
    """Return an h x w x C float64 resize using half-pixel centers.

    Output pixel d samples source coordinate (d + 0.5) · in / out − 0.5, clamped to
    the source edge.
    """
    if image.ndim != 3:
        raise RejectedInputError(f"Expected h x w x C image, got dims {image.shape}")
    height, width = (int(value) for value in size)
    if height < 1 or width < 1:
        raise RejectedInputError(f"Target size must be positive, got {tuple(size)}")

    source = image.astype(np.float64)
    in_height, in_width = source.shape[:2]
    rows = (np.arange(height) + 0.5) * in_height / height - 0.5
    cols = (np.arange(width) + 0.5) * in_width / width - 0.5
    rows = np.clip(rows, 0, in_height - 1)
    cols = np.clip(cols, 0, in_width - 1)
    grid = np.meshgrid(rows, cols, indexing="ij")
    return np.stack(
        [
            ndimage.map_coordinates(source[..., channel], grid, order=1, mode="nearest")
            for channel in range(source.shape[2])
        ],
        axis=-1,
    )


def standardize(images: np.ndarray) -> np.ndarray:
    """Return loader tensors centered on 0.5 and divided by 0.25 for the backbone."""
    return (images - INPUT_MEAN) / INPUT_SCALE


@dataclass
class Batch:
    """Define a loaded slice of a manifest."""

    images: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    image_ids: list[str]

    def __len__(self) -> int:
        """Return the number of images."""
        return len(self.image_ids)


class ImageLoader:
    """Define a loader turning manifest records into n x C x h x w tensors in [0, 1]."""

    def __init__(
        self,
        manifest: DatasetManifest,
        target_size: Sequence[int] = DEFAULT_INPUT_SIZE,
        *,
        in_channels: int = 3,
        dtype: Union[str, np.dtype] = np.float64,
        workers: int = 1,
        cache: bool = False,
    ) -> None:
        """Initialize."""
        self._cache: Optional[dict[str, np.ndarray]] = {} if cache else None
        self.dtype = np.dtype(dtype)
        self.in_channels = in_channels
        self.manifest = manifest
        self.target_size = tuple(target_size)
        self.workers = max(1, workers)

    def load_image(self, record: ManifestRecord) -> np.ndarray:
        """Return one C x h x w tensor."""
        if self._cache is not None and record.image_id in self._cache:
            return self._cache[record.image_id]

        path = self.manifest.resolve(record)
        pixels = decode_image(path, self.in_channels)
        resized = resize_bilinear(pixels, self.target_size) / 255.0
        tensor = np.ascontiguousarray(resized.transpose(2, 0, 1), dtype=self.dtype)
        LOGGER.debug("Decoded %s to %s", path, tensor.shape)

        if self._cache is not None:
            self._cache[record.image_id] = tensor
        return tensor

    def _batch(
        self, records: Sequence[ManifestRecord], images: list[np.ndarray]
    ) -> Batch:
        if not records:
            raise RejectedInputError("Cannot load an empty batch")
        return Batch(
            images=np.stack(images),
            labels=np.array([record.label for record in records], dtype=np.int64),
            weights=np.array(
                [record.hazard_weight for record in records], dtype=np.float64
            ),
            image_ids=[record.image_id for record in records],
        )

    def load_batch(self, records: Sequence[ManifestRecord]) -> Batch:
        """Load records one after another."""
        return self._batch(records, [self.load_image(record) for record in records])

    async def async_load_batch(self, records: Sequence[ManifestRecord]) -> Batch:
        """Load records across a thread pool; order follows the records."""
        if self.workers == 1:
            return self.load_batch(records)

        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            images = await asyncio.gather(
                *(
                    loop.run_in_executor(executor, self.load_image, record)
                    for record in records
                )
            )
        return self._batch(records, list(images))
