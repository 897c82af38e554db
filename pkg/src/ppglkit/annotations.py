"""Box annotations and weak 3D ground-truth rasterization.

A lesion is marked as a 2D box on one axial slice. The weak 3D target
extends that box to the adjacent slices on each side (3 by default, a
7-slice slab), clamped at the volume boundary, and is merged over an
optional body mask using the background/body/lesion label scheme.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

import numpy as np

from ._labeling import label_foreground
from .components import connected_components
from .grid import Box3D, GridKind, LabelScheme, VoxelGrid

_CSV_FIELDS = ("scan_id", "lesion_id", "slice_z", "x_min", "y_min", "x_max", "y_max")


@dataclasses.dataclass(frozen=True)
class BoxAnnotation:
    """One 2D lesion box on a single axial slice, inclusive 0-based bounds."""

    scan_id: str
    lesion_id: str
    slice_z: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not self.scan_id:
            raise ValueError("empty scan_id")
        if not self.lesion_id:
            raise ValueError("empty lesion_id")
        if self.slice_z < 0:
            raise ValueError(f"{self.scan_id}/{self.lesion_id}: negative slice_z")
        if min(self.x_min, self.y_min) < 0:
            raise ValueError(f"{self.scan_id}/{self.lesion_id}: negative box corner")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"{self.scan_id}/{self.lesion_id}: inverted box "
                f"({self.x_min},{self.y_min})..({self.x_max},{self.y_max})"
            )

    @property
    def area_voxels(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


@dataclasses.dataclass(frozen=True)
class SlabConfig:
    """How far a 2D box is extended along z, in slices per side."""

    extent_each_side: int = 3

    def __post_init__(self):
        if self.extent_each_side < 0:
            raise ValueError(f"extent_each_side must be >= 0, got {self.extent_each_side}")


def _parse_row(fields: list[str], lineno: int, source: str) -> BoxAnnotation:
    if len(fields) != len(_CSV_FIELDS):
        raise ValueError(f"{source}:{lineno}: expected {len(_CSV_FIELDS)} fields, got {len(fields)}")
    scan_id, lesion_id = fields[0].strip(), fields[1].strip()
    try:
        nums = [int(v) for v in fields[2:]]
    except ValueError as exc:
        raise ValueError(f"{source}:{lineno}: non-integer coordinate: {exc}") from exc
    try:
        return BoxAnnotation(scan_id, lesion_id, *nums)
    except ValueError as exc:
        raise ValueError(f"{source}:{lineno}: {exc}") from exc


def load_annotations(path: str | os.PathLike) -> list[BoxAnnotation]:
    """Read annotations from CSV (canonical) or JSON, chosen by extension.

    The CSV must carry the exact header
    ``scan_id,lesion_id,slice_z,x_min,y_min,x_max,y_max``; lines starting
    with '#' are comments. The JSON form is an array of objects with the
    same keys. Duplicate (scan_id, lesion_id) pairs are rejected.
    """
    path = os.fspath(path)
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            records = json.load(f)
        if not isinstance(records, list):
            raise ValueError(f"{path}: expected a JSON array of annotation objects")
        anns = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict) or set(rec) != set(_CSV_FIELDS):
                raise ValueError(f"{path}: record {i} must have exactly the keys {_CSV_FIELDS}")
            try:
                anns.append(
                    BoxAnnotation(
                        str(rec["scan_id"]),
                        str(rec["lesion_id"]),
                        *(int(rec[k]) for k in _CSV_FIELDS[2:]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: record {i}: {exc}") from exc
    else:
        anns = []
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = [
                (lineno, fields)
                for lineno, fields in enumerate(csv.reader(f), start=1)
                if fields and not fields[0].lstrip().startswith("#")
            ]
        if not rows:
            raise ValueError(f"{path}: missing header row")
        header_line, header = rows[0]
        if tuple(h.strip() for h in header) != _CSV_FIELDS:
            raise ValueError(
                f"{path}:{header_line}: header must be {','.join(_CSV_FIELDS)}"
            )
        for lineno, fields in rows[1:]:
            anns.append(_parse_row(fields, lineno, path))

    seen = set()
    for a in anns:
        key = (a.scan_id, a.lesion_id)
        if key in seen:
            raise ValueError(f"{path}: duplicate annotation {a.scan_id}/{a.lesion_id}")
        seen.add(key)
    return anns


def save_annotations(annotations: list[BoxAnnotation], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_CSV_FIELDS)
        for a in annotations:
            writer.writerow(
                [a.scan_id, a.lesion_id, a.slice_z, a.x_min, a.y_min, a.x_max, a.y_max]
            )


def extend_to_slab(box: BoxAnnotation, cfg: SlabConfig, nz: int) -> Box3D:
    """Extend a 2D box along z by the configured extent, clamped to [0, nz).

    In-plane bounds are passed through untouched; the in-plane fit is
    checked against the actual volume dims at rasterization time.
    """
    if not 0 <= box.slice_z < nz:
        raise ValueError(
            f"{box.scan_id}/{box.lesion_id}: slice_z {box.slice_z} outside volume of {nz} slices"
        )
    e = cfg.extent_each_side
    return Box3D(
        box.x_min,
        box.x_max,
        box.y_min,
        box.y_max,
        max(0, box.slice_z - e),
        min(nz - 1, box.slice_z + e),
    )


def rasterize_ground_truth(
    annotations: list[BoxAnnotation],
    body: VoxelGrid | None,
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    cfg: SlabConfig = SlabConfig(),
) -> VoxelGrid:
    """Build the merged weak ground-truth mask for one scan.

    Voxels inside any annotation slab get the lesion label; remaining
    voxels covered by the body mask get the body label; everything else
    stays background. Lesion always wins over body.
    """
    nx, ny, nz = dims
    scan_ids = {a.scan_id for a in annotations}
    if len(scan_ids) > 1:
        raise ValueError(f"annotations span multiple scans: {sorted(scan_ids)}")
    if body is not None:
        if body.kind is not GridKind.LABEL:
            raise ValueError("body mask must be a label grid")
        if body.dims != (nx, ny, nz):
            raise ValueError(f"body dims {body.dims} do not match volume dims {dims}")

    out = np.zeros((nx, ny, nz), dtype=np.uint8, order="F")
    if body is not None:
        out[body.data != 0] = LabelScheme.BODY
    for a in annotations:
        if a.x_max >= nx or a.y_max >= ny:
            raise ValueError(
                f"{a.scan_id}/{a.lesion_id}: box exceeds in-plane dims ({nx}, {ny})"
            )
        slab = extend_to_slab(a, cfg, nz)
        out[
            slab.x_min : slab.x_max + 1,
            slab.y_min : slab.y_max + 1,
            slab.z_min : slab.z_max + 1,
        ] = LabelScheme.LESION
    return VoxelGrid(out, spacing, GridKind.LABEL)


def extract_body_fallback(ct: VoxelGrid, hu_threshold: float = -500.0) -> VoxelGrid:
    """Rough body mask for when no dedicated segmentation is available.

    Thresholds at HU > hu_threshold, keeps the largest 26-connected
    component, then fills enclosed holes slice by slice (4-connected
    background regions not reaching the slice border become body).
    Output labels are {0, 1}.
    """
    if ct.kind is not GridKind.INTENSITY:
        raise ValueError("extract_body_fallback requires an intensity grid")
    nx, ny, nz = ct.dims
    fg = (ct.data > hu_threshold).astype(np.uint8)
    if not fg.any():
        raise ValueError(f"no voxels above {hu_threshold} HU: nothing to segment")

    candidates = connected_components(
        VoxelGrid(fg, ct.spacing, GridKind.LABEL), target_label=1, connectivity=26
    )
    body = np.zeros((nx, ny, nz), dtype=np.uint8, order="F")
    body.reshape(-1, order="F")[candidates[0].voxels] = 1

    for z in range(nz):
        sl = body[:, :, z]
        bg_idx = np.flatnonzero((sl == 0).reshape(-1, order="F"))
        if bg_idx.size == 0:
            continue
        root = label_foreground(bg_idx, nx, ny, 1, connectivity=6)
        x = bg_idx % nx
        y = bg_idx // nx
        on_border = (x == 0) | (x == nx - 1) | (y == 0) | (y == ny - 1)
        open_roots = np.unique(root[on_border])
        holes = bg_idx[~np.isin(root, open_roots)]
        if holes.size:
            sl.reshape(-1, order="F")[holes] = 1
    return VoxelGrid(body, ct.spacing, GridKind.LABEL)
