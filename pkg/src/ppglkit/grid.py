"""Voxel grid data model shared by every stage of the pipeline.

Axis 0 is x, axis 1 is y, axis 2 is z; an "axial slice" is the plane at a
fixed z index. Arrays are kept in Fortran layout so that x varies fastest
in memory, matching the on-disk voxel order of the file format. Linear
voxel indices used throughout the package follow the same convention:
``idx = x + nx * (y + ny * z)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class GridKind(enum.Enum):
    """What the scalar values of a grid mean."""

    INTENSITY = "intensity"  # real-valued Hounsfield units
    LABEL = "label"          # non-negative integer class labels


class LabelScheme:
    """Label values of the merged ground-truth encoding."""

    BACKGROUND = 0
    BODY = 1
    LESION = 2


@dataclass(frozen=True)
class Box3D:
    """Inclusive 3D integer box."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int
    z_min: int
    z_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max or self.z_min > self.z_max:
            raise ValueError(f"inverted box: {self}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (
            self.x_max - self.x_min + 1,
            self.y_max - self.y_min + 1,
            self.z_max - self.z_min + 1,
        )

    @property
    def voxel_count(self) -> int:
        sx, sy, sz = self.shape
        return sx * sy * sz

    def intersects(self, other: "Box3D") -> bool:
        return (
            self.x_min <= other.x_max and other.x_min <= self.x_max
            and self.y_min <= other.y_max and other.y_min <= self.y_max
            and self.z_min <= other.z_max and other.z_min <= self.z_max
        )

    def to_dict(self) -> dict[str, int]:
        return {
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "z_min": self.z_min, "z_max": self.z_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(
            int(d["x_min"]), int(d["x_max"]),
            int(d["y_min"]), int(d["y_max"]),
            int(d["z_min"]), int(d["z_max"]),
        )


@dataclass(frozen=True)
class VoxelGrid:
    """A 3D scalar volume with physical voxel spacing in mm.

    The grid is treated as immutable after construction and may be shared
    across threads; do not write into ``data``. Label grids carry integer
    dtypes and only non-negative values; intensity grids are float32.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    kind: GridKind

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected a 3D array, got ndim={data.ndim}")
        if min(data.shape) < 1:
            raise ValueError(f"empty volume dims {data.shape}")
        if self.kind is GridKind.LABEL:
            if data.dtype.kind not in "ui":
                raise ValueError(f"label grid requires an integer dtype, got {data.dtype}")
            if data.size and int(data.min()) < 0:
                raise ValueError("label grid contains negative values")
        else:
            if data.dtype != np.float32:
                data = data.astype(np.float32)
        data = np.asfortranarray(data)

        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3:
            raise ValueError("spacing must have three components")
        if not all(math.isfinite(s) and s > 0.0 for s in spacing):
            raise ValueError(f"spacing components must be finite and positive, got {spacing}")

        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def flat(self) -> np.ndarray:
        """The voxel values in x-fastest linear order (a view when possible)."""
        return self.data.reshape(-1, order="F")
