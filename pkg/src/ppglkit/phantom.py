"""Synthetic CT phantoms with analytically known detection outcomes.

A phantom is air plus a body region plus non-touching ellipsoidal
lesions. Because lesions are constructed pairwise separated, the lesion
mask has exactly one connected component per lesion, and a perturbed
"prediction" (dropped lesions, spurious blobs, a global jitter of the
kept ones) has a closed-form (TP, FP, FN) triple at any size threshold.
All randomness flows through the Philox counter-based generator keyed by
the spec seed, so outputs are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os

import numpy as np

from .annotations import BoxAnnotation
from .components import SizeThreshold, connected_components
from .grid import Box3D, GridKind, LabelScheme, VoxelGrid

HU_MIN = -1024.0
HU_MAX = 3071.0


@dataclasses.dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid on the voxel lattice, radii in voxels."""

    center: tuple[int, int, int]
    radii: tuple[float, float, float]
    mean_hu: float = 0.0

    def __post_init__(self):
        if len(self.center) != 3 or len(self.radii) != 3:
            raise ValueError("center and radii must have 3 entries")
        if min(self.radii) <= 0:
            raise ValueError(f"radii must be positive, got {self.radii}")

    def bounds(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (int(math.ceil(c - r)), int(math.floor(c + r)))
            for c, r in zip(self.center, self.radii)
        )


def _ellipsoid_mask(e: Ellipsoid, dims: tuple[int, int, int]):
    """Voxelize: lattice points with sum((p-c)/r)^2 <= 1, clipped to dims.

    Returns (index slices into the volume, local boolean mask).
    """
    (x0, x1), (y0, y1), (z0, z1) = e.bounds()
    x0, y0, z0 = max(0, x0), max(0, y0), max(0, z0)
    x1, y1, z1 = min(dims[0] - 1, x1), min(dims[1] - 1, y1), min(dims[2] - 1, z1)
    if x0 > x1 or y0 > y1 or z0 > z1:
        return None, None
    cx, cy, cz = e.center
    rx, ry, rz = e.radii
    u = ((np.arange(x0, x1 + 1) - cx) / rx) ** 2
    v = ((np.arange(y0, y1 + 1) - cy) / ry) ** 2
    w = ((np.arange(z0, z1 + 1) - cz) / rz) ** 2
    inside = u[:, None, None] + v[None, :, None] + w[None, None, :] <= 1.0
    sel = (slice(x0, x1 + 1), slice(y0, y1 + 1), slice(z0, z1 + 1))
    return sel, inside


def ellipsoid_voxel_count(e: Ellipsoid, dims: tuple[int, int, int]) -> int:
    sel, inside = _ellipsoid_mask(e, dims)
    return 0 if inside is None else int(inside.sum())


@dataclasses.dataclass(frozen=True)
class BodyRegion:
    """Patient-like region: a cuboid or an ellipsoid of soft-tissue HU."""

    shape: str
    box: Box3D | None = None
    ellipsoid: Ellipsoid | None = None
    mean_hu: float = 40.0

    def __post_init__(self):
        if self.shape not in ("cuboid", "ellipsoid"):
            raise ValueError(f"body shape must be 'cuboid' or 'ellipsoid', got {self.shape!r}")
        if self.shape == "cuboid" and self.box is None:
            raise ValueError("cuboid body needs a box")
        if self.shape == "ellipsoid" and self.ellipsoid is None:
            raise ValueError("ellipsoid body needs an ellipsoid")

    def fill(self, mask: np.ndarray) -> None:
        if self.shape == "cuboid":
            b = self.box
            mask[b.x_min : b.x_max + 1, b.y_min : b.y_max + 1, b.z_min : b.z_max + 1] = True
        else:
            sel, inside = _ellipsoid_mask(self.ellipsoid, mask.shape)
            if inside is not None:
                mask[sel] |= inside

    def contains_point(self, p: tuple[int, int, int]) -> bool:
        if self.shape == "cuboid":
            b = self.box
            return (
                b.x_min <= p[0] <= b.x_max
                and b.y_min <= p[1] <= b.y_max
                and b.z_min <= p[2] <= b.z_max
            )
        e = self.ellipsoid
        return (
            sum(((p[i] - e.center[i]) / e.radii[i]) ** 2 for i in range(3)) <= 1.0
        )


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    scan_id: str
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    body: BodyRegion
    lesions: tuple[Ellipsoid, ...]
    air_hu: float = -1000.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"invalid dims {self.dims}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def generate_phantom(
    spec: PhantomSpec,
) -> tuple[VoxelGrid, list[BoxAnnotation], VoxelGrid]:
    """Build (ct, box annotations, exact lesion mask) for a spec.

    The annotation for each lesion sits on the slice through its center,
    the maximal cross-section, with the tight in-plane bbox of that
    slice. Lesions must be pairwise non-adjacent (no shared or touching
    voxels under 26-connectivity) so each remains its own component;
    violations are rejected rather than silently merged.
    """
    dims = spec.dims
    body_mask = np.zeros(dims, dtype=bool, order="F")
    spec.body.fill(body_mask)
    if not body_mask.any():
        raise ValueError(f"{spec.scan_id}: body region is empty")

    gt = np.zeros(dims, dtype=np.uint8, order="F")
    gt[body_mask] = LabelScheme.BODY

    annotations = []
    for i, les in enumerate(spec.lesions):
        if not spec.body.contains_point(les.center):
            raise ValueError(f"{spec.scan_id}: lesion {i + 1} center outside the body region")
        sel, inside = _ellipsoid_mask(les, dims)
        if inside is None or not inside.any():
            raise ValueError(f"{spec.scan_id}: lesion {i + 1} voxelizes to nothing")
        gt[sel][inside] = LabelScheme.LESION

        cz = les.center[2]
        z_local = cz - sel[2].start
        cross = inside[:, :, z_local]
        xs, ys = np.nonzero(cross)
        annotations.append(
            BoxAnnotation(
                scan_id=spec.scan_id,
                lesion_id=f"L{i + 1}",
                slice_z=cz,
                x_min=int(xs.min()) + sel[0].start,
                y_min=int(ys.min()) + sel[1].start,
                x_max=int(xs.max()) + sel[0].start,
                y_max=int(ys.max()) + sel[1].start,
            )
        )

    gt_grid = VoxelGrid(gt, spec.spacing, GridKind.LABEL)
    comps = connected_components(gt_grid, LabelScheme.LESION, connectivity=26)
    if len(comps) != len(spec.lesions):
        raise ValueError(
            f"{spec.scan_id}: lesions overlap or touch "
            f"({len(spec.lesions)} specified, {len(comps)} components)"
        )

    ct = np.full(dims, np.float32(spec.air_hu), dtype=np.float32, order="F")
    ct[body_mask] = np.float32(spec.body.mean_hu)
    for les in spec.lesions:
        sel, inside = _ellipsoid_mask(les, dims)
        ct[sel][inside] = np.float32(les.mean_hu)
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
        noise = rng.standard_normal(size=dims, dtype=np.float32)
        ct += np.float32(spec.noise_sigma) * noise
        np.clip(ct, HU_MIN, HU_MAX, out=ct)
    ct_grid = VoxelGrid(ct, spec.spacing, GridKind.INTENSITY)
    return ct_grid, annotations, gt_grid


@dataclasses.dataclass(frozen=True)
class PerturbationSpec:
    """How a prediction differs from the truth.

    ``drop_lesions`` names ground-truth component ids to omit (each
    becomes an FN); ``spurious_blobs`` are extra ellipsoids disjoint from
    every lesion (each an FP while it survives the size filter);
    ``jitter_voxels`` translates every kept lesion by the same integer
    offset, small enough that each still overlaps its own lesion.
    """

    drop_lesions: tuple[int, ...] = ()
    spurious_blobs: tuple[Ellipsoid, ...] = ()
    jitter_voxels: tuple[int, int, int] = (0, 0, 0)


def _passes(threshold: SizeThreshold, count: int, voxel_volume: float) -> bool:
    if count < threshold.min_voxels:
        return False
    if threshold.min_mm3 is not None and count * voxel_volume < threshold.min_mm3:
        return False
    return True


def perturb_to_prediction(
    gt_mask: VoxelGrid,
    pspec: PerturbationSpec,
    threshold: SizeThreshold = SizeThreshold(),
    lesion_label: int = 2,
) -> tuple[VoxelGrid, tuple[int, int, int]]:
    """Derive a prediction mask and its expected (TP, FP, FN) triple.

    The triple is computed in closed form from construction: TP = kept
    lesions surviving the size filter, FP = surviving spurious blobs,
    FN = dropped lesions plus any kept lesion removed by the filter.
    Construction is checked, not trusted: the prediction's component
    count must equal kept + spurious, spurious blobs must not overlap any
    ground-truth lesion, and each jittered lesion must overlap its own
    source and nothing else.
    """
    dims = gt_mask.dims
    gt_comps = connected_components(gt_mask, LabelScheme.LESION, connectivity=26)
    by_id = {c.component_id: c for c in gt_comps}
    for did in pspec.drop_lesions:
        if did not in by_id:
            raise ValueError(f"drop_lesions names unknown component id {did}")
    kept_ids = [c.component_id for c in gt_comps if c.component_id not in set(pspec.drop_lesions)]

    pred = np.zeros(dims, dtype=np.uint8, order="F")
    pred[gt_mask.data != LabelScheme.BACKGROUND] = LabelScheme.BODY

    nx, ny, nz = dims
    dx, dy, dz = pspec.jitter_voxels
    gt_flat = gt_mask.data.reshape(-1, order="F")
    pred_flat = pred.reshape(-1, order="F")

    kept_counts = []
    for cid in kept_ids:
        c = by_id[cid]
        lin = c.voxels
        x = lin % nx + dx
        t = lin // nx
        y = t % ny + dy
        z = t // ny + dz
        ok = (x >= 0) & (x < nx) & (y >= 0) & (y < ny) & (z >= 0) & (z < nz)
        moved = x[ok] + nx * (y[ok] + ny * z[ok])
        own = np.intersect1d(moved, lin, assume_unique=True).size
        if own == 0:
            raise ValueError(f"jitter {pspec.jitter_voxels} breaks overlap for lesion {cid}")
        touched_labels = gt_flat[moved]
        foreign = moved[touched_labels == LabelScheme.LESION]
        if not np.isin(foreign, lin).all():
            raise ValueError(f"jittered lesion {cid} overlaps a different lesion")
        pred_flat[moved] = lesion_label
        kept_counts.append(moved.size)

    spurious_counts = []
    for j, blob in enumerate(pspec.spurious_blobs):
        sel, inside = _ellipsoid_mask(blob, dims)
        if inside is None or not inside.any():
            raise ValueError(f"spurious blob {j} voxelizes to nothing")
        region = gt_mask.data[sel]
        if (region[inside] == LabelScheme.LESION).any():
            raise ValueError(f"spurious blob {j} overlaps a ground-truth lesion")
        if (pred[sel][inside] == lesion_label).any():
            raise ValueError(f"spurious blob {j} overlaps another predicted lesion")
        pred[sel][inside] = lesion_label
        spurious_counts.append(int(inside.sum()))

    pred_grid = VoxelGrid(pred, gt_mask.spacing, GridKind.LABEL)
    n_pred_comps = len(connected_components(pred_grid, lesion_label, connectivity=26))
    if n_pred_comps != len(kept_ids) + len(spurious_counts):
        raise ValueError(
            f"prediction regions touch: expected {len(kept_ids) + len(spurious_counts)} "
            f"components, found {n_pred_comps}"
        )

    vv = gt_mask.voxel_volume_mm3
    tp = sum(1 for c in kept_counts if _passes(threshold, c, vv))
    fp = sum(1 for c in spurious_counts if _passes(threshold, c, vv))
    fn = len(pspec.drop_lesions) + sum(1 for c in kept_counts if not _passes(threshold, c, vv))
    return pred_grid, (tp, fp, fn)


def expected_triple(
    kept_counts: list[int],
    spurious_counts: list[int],
    n_dropped: int,
    threshold: SizeThreshold,
    voxel_volume: float = 1.0,
) -> tuple[int, int, int]:
    """Closed-form triple for stored per-blob sizes at any threshold."""
    tp = sum(1 for c in kept_counts if _passes(threshold, c, voxel_volume))
    fp = sum(1 for c in spurious_counts if _passes(threshold, c, voxel_volume))
    fn = n_dropped + sum(1 for c in kept_counts if not _passes(threshold, c, voxel_volume))
    return tp, fp, fn


@dataclasses.dataclass(frozen=True)
class SuiteConfig:
    """Sampling ranges for randomized phantom/perturbation pairs.

    Lesions and large blobs use radii >= 4.2 voxels so they voxelize
    well above 250 voxels; small blobs stay below ~100 voxels. Placement
    keeps every pair of regions separated by at least
    ``2 + 2*jitter_max`` voxels along some axis, which preserves the
    component count under any sampled jitter.
    """

    dims: tuple[int, int, int] = (64, 64, 40)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_lesions: tuple[int, int] = (1, 3)
    lesion_radius: tuple[float, float] = (4.5, 7.0)
    lesion_hu: tuple[float, float] = (60.0, 90.0)
    n_drop: tuple[int, int] = (0, 1)
    n_spurious_small: tuple[int, int] = (0, 2)
    small_radius: tuple[float, float] = (1.5, 2.8)
    n_spurious_large: tuple[int, int] = (0, 1)
    large_radius: tuple[float, float] = (4.5, 6.0)
    jitter_max: int = 1
    noise_sigma: float = 15.0
    body_hu: float = 40.0
    air_hu: float = -1000.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        kwargs = {}
        for field in dataclasses.fields(cls):
            if field.name in d:
                v = d[field.name]
                kwargs[field.name] = tuple(v) if isinstance(v, list) else v
        extra = set(d) - {f.name for f in dataclasses.fields(cls)}
        if extra:
            raise ValueError(f"unknown suite config keys: {sorted(extra)}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "SuiteConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _sample_regions(rng, cfg: SuiteConfig, counts: list[tuple[int, tuple[float, float]]]):
    """Place ellipsoids with pairwise axis gaps; returns list per request group."""
    pad = cfg.jitter_max + 2
    min_gap = 2 + 2 * cfg.jitter_max
    placed_bounds = []
    groups = []
    for n, radius_range in counts:
        group = []
        for _ in range(n):
            for _attempt in range(200):
                radii = tuple(float(rng.uniform(*radius_range)) for _ in range(3))
                lo = [int(math.ceil(radii[a])) + pad for a in range(3)]
                hi = [cfg.dims[a] - 1 - pad - int(math.ceil(radii[a])) for a in range(3)]
                if any(lo[a] > hi[a] for a in range(3)):
                    raise ValueError("suite dims too small for the configured radii")
                center = tuple(int(rng.integers(lo[a], hi[a] + 1)) for a in range(3))
                bounds = tuple(
                    (int(math.ceil(center[a] - radii[a])), int(math.floor(center[a] + radii[a])))
                    for a in range(3)
                )
                clear = True
                for other in placed_bounds:
                    gap = max(
                        max(other[a][0] - bounds[a][1], bounds[a][0] - other[a][1]) - 1
                        for a in range(3)
                    )
                    if gap < min_gap:
                        clear = False
                        break
                if clear:
                    placed_bounds.append(bounds)
                    group.append((center, radii))
                    break
            else:
                raise ValueError("could not place all regions; shrink counts or grow dims")
        groups.append(group)
    return groups


def sample_case(
    cfg: SuiteConfig, suite_seed: int, index: int
) -> tuple[PhantomSpec, PerturbationSpec]:
    """Draw one deterministic (phantom, perturbation) pair of a suite."""
    if suite_seed < 0 or index < 0:
        raise ValueError("suite_seed and index must be non-negative")
    key = np.array([suite_seed, index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))

    n_lesions = int(rng.integers(cfg.n_lesions[0], cfg.n_lesions[1] + 1))
    n_small = int(rng.integers(cfg.n_spurious_small[0], cfg.n_spurious_small[1] + 1))
    n_large = int(rng.integers(cfg.n_spurious_large[0], cfg.n_spurious_large[1] + 1))
    lesion_geo, small_geo, large_geo = _sample_regions(
        rng,
        cfg,
        [
            (n_lesions, cfg.lesion_radius),
            (n_small, cfg.small_radius),
            (n_large, cfg.large_radius),
        ],
    )

    lesions = tuple(
        Ellipsoid(center, radii, mean_hu=float(rng.uniform(*cfg.lesion_hu)))
        for center, radii in lesion_geo
    )
    nx, ny, nz = cfg.dims
    body = BodyRegion(
        shape="cuboid",
        box=Box3D(1, nx - 2, 1, ny - 2, 1, nz - 2),
        mean_hu=cfg.body_hu,
    )
    spec = PhantomSpec(
        scan_id=f"scan_{index:03d}",
        dims=cfg.dims,
        spacing=cfg.spacing,
        body=body,
        lesions=lesions,
        air_hu=cfg.air_hu,
        noise_sigma=cfg.noise_sigma,
        seed=int(rng.integers(0, 2**63)),
    )

    n_drop = int(rng.integers(cfg.n_drop[0], min(cfg.n_drop[1], n_lesions) + 1))
    drop = tuple(
        sorted(int(i) + 1 for i in rng.choice(n_lesions, size=n_drop, replace=False))
    )
    jitter = tuple(
        int(rng.integers(-cfg.jitter_max, cfg.jitter_max + 1)) for _ in range(3)
    )
    spurious = tuple(
        Ellipsoid(center, radii) for center, radii in small_geo + large_geo
    )
    return spec, PerturbationSpec(
        drop_lesions=drop, spurious_blobs=spurious, jitter_voxels=jitter
    )
