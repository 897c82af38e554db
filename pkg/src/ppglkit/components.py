"""3D connected components of label masks, measurement, and size filtering."""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from ._labeling import label_foreground
from .grid import Box3D, GridKind, VoxelGrid


@dataclasses.dataclass(eq=False)
class Component:
    """One maximal connected region of same-label voxels.

    ``voxels`` holds the sorted linear indices (x-fastest order) of the
    member voxels; ``centroid`` is the mean voxel coordinate, so it can
    fall between lattice points.
    """

    component_id: int
    voxel_count: int
    volume_mm3: float
    bbox: Box3D
    centroid: tuple[float, float, float]
    voxels: np.ndarray

    def to_dict(self) -> dict:
        return {
            "id": self.component_id,
            "voxel_count": self.voxel_count,
            "volume_mm3": self.volume_mm3,
            "bbox": self.bbox.to_dict(),
            "centroid": list(self.centroid),
        }


@dataclasses.dataclass(frozen=True)
class SizeThreshold:
    """Minimum size for a predicted component to be retained.

    ``min_voxels`` is the primary criterion (250 at the standard
    operating point). ``min_mm3`` is an optional alternative expressed in
    physical volume; when set, both constraints must hold.
    """

    min_voxels: int = 0
    min_mm3: float | None = None

    def __post_init__(self):
        if self.min_voxels < 0:
            raise ValueError(f"min_voxels must be >= 0, got {self.min_voxels}")
        if self.min_mm3 is not None and self.min_mm3 < 0:
            raise ValueError(f"min_mm3 must be >= 0, got {self.min_mm3}")

    def keeps(self, c: Component) -> bool:
        if c.voxel_count < self.min_voxels:
            return False
        if self.min_mm3 is not None and c.volume_mm3 < self.min_mm3:
            return False
        return True


def connected_components(
    mask: VoxelGrid,
    target_label: int,
    connectivity: int = 26,
    backend: str | None = None,
) -> list[Component]:
    """Extract components of ``target_label`` voxels.

    Components are numbered 1..K by descending voxel count; ties broken
    by the smaller minimum linear index, so the ordering is deterministic
    for any backend.
    """
    if mask.kind is not GridKind.LABEL:
        raise ValueError("connected_components requires a label grid")
    nx, ny, nz = mask.dims
    flat = mask.flat()
    fg_idx = np.flatnonzero(flat == target_label)
    if fg_idx.size == 0:
        return []
    root_lin = label_foreground(fg_idx, nx, ny, nz, connectivity, backend)

    uniq_roots, inverse, counts = np.unique(root_lin, return_inverse=True, return_counts=True)
    k = uniq_roots.shape[0]

    x = fg_idx % nx
    t = fg_idx // nx
    y = t % ny
    z = t // ny

    big = np.iinfo(np.int64).max
    x_min = np.full(k, big, np.int64)
    y_min = np.full(k, big, np.int64)
    z_min = np.full(k, big, np.int64)
    x_max = np.full(k, -1, np.int64)
    y_max = np.full(k, -1, np.int64)
    z_max = np.full(k, -1, np.int64)
    np.minimum.at(x_min, inverse, x)
    np.minimum.at(y_min, inverse, y)
    np.minimum.at(z_min, inverse, z)
    np.maximum.at(x_max, inverse, x)
    np.maximum.at(y_max, inverse, y)
    np.maximum.at(z_max, inverse, z)
    cx = np.bincount(inverse, weights=x, minlength=k) / counts
    cy = np.bincount(inverse, weights=y, minlength=k) / counts
    cz = np.bincount(inverse, weights=z, minlength=k) / counts

    # member voxels grouped per root, ascending within each group
    grouping = np.argsort(inverse, kind="stable")
    splits = np.cumsum(counts)[:-1]
    member_lists = np.split(fg_idx[grouping], splits)

    order = np.lexsort((uniq_roots, -counts))
    vol = mask.voxel_volume_mm3
    out = []
    for rank, g in enumerate(order):
        out.append(
            Component(
                component_id=rank + 1,
                voxel_count=int(counts[g]),
                volume_mm3=float(counts[g]) * vol,
                bbox=Box3D(
                    int(x_min[g]), int(x_max[g]),
                    int(y_min[g]), int(y_max[g]),
                    int(z_min[g]), int(z_max[g]),
                ),
                centroid=(float(cx[g]), float(cy[g]), float(cz[g])),
                voxels=member_lists[g],
            )
        )
    return out


def filter_by_size(components: list[Component], t: SizeThreshold) -> list[Component]:
    """Keep components meeting the threshold; order is preserved."""
    return [c for c in components if t.keeps(c)]


def size_percentile(sizes, p: float) -> int:
    """Nearest-rank percentile of a list of voxel counts.

    Returns the ceil(p/100 * n)-th smallest value; p = 0 gives the
    minimum.
    """
    n = len(sizes)
    if n == 0:
        raise ValueError("size_percentile of an empty list")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    ordered = sorted(int(s) for s in sizes)
    rank = int(np.ceil(p / 100.0 * n))
    if rank < 1:
        rank = 1
    return ordered[rank - 1]


def components_to_json(scan_id: str, components: list[Component]) -> dict:
    return {
        "schema_version": 1,
        "scan_id": scan_id,
        "components": [c.to_dict() for c in components],
    }


def save_components(scan_id: str, components: list[Component], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(components_to_json(scan_id, components), f, indent=2, sort_keys=True)
        f.write("\n")
