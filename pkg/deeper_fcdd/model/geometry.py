"""Define receptive-field geometry of a backbone's output cells."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class FieldGeometry:
    """Define where each output cell looks in input coordinates.

    ``start`` is the input coordinate of cell (0, 0)'s field center; cell (x, y) is
    centered at ``start + (x, y) * jump``. Coordinates are (row, column).
    """

    jump: tuple[int, int]
    extent: tuple[int, int]
    start: tuple[float, float]
    out_dims: tuple[int, int]
    in_dims: tuple[int, int]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FieldGeometry":
        """Create an instance from a plain dict."""
        return cls(
            jump=tuple(int(value) for value in data["jump"]),
            extent=tuple(int(value) for value in data["extent"]),
            start=tuple(float(value) for value in data["start"]),
            out_dims=tuple(int(value) for value in data["out_dims"]),
            in_dims=tuple(int(value) for value in data["in_dims"]),
        )

    def as_dict(self) -> dict[str, Any]:
        """Return a plain dict."""
        return {
            "jump": list(self.jump),
            "extent": list(self.extent),
            "start": list(self.start),
            "out_dims": list(self.out_dims),
            "in_dims": list(self.in_dims),
        }

    @property
    def default_delta(self) -> float:
        """Return the Gaussian std-dev used when none is configured (extent / 4)."""
        return max(self.extent) / 4.0

    def center(self, x: int, y: int) -> tuple[float, float]:
        """Return the field center of output cell (x, y)."""
        return (
            self.start[0] + x * self.jump[0],
            self.start[1] + y * self.jump[1],
        )

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the receptive-field centers of every map row and every map column."""
        rows = self.start[0] + np.arange(self.out_dims[0]) * self.jump[0]
        cols = self.start[1] + np.arange(self.out_dims[1]) * self.jump[1]
        return rows.astype(np.float64), cols.astype(np.float64)
