"""Debug rendering: HU windowing of axial slices and mask overlays."""

from __future__ import annotations

import os

import numpy as np

from .grid import GridKind, VoxelGrid

DEFAULT_CENTER = 50.0
DEFAULT_WIDTH = 450.0

GT_COLOR = (255, 255, 0)  # yellow
PRED_COLOR = (0, 0, 255)  # blue


def _round_half_up_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def window_render(grid: VoxelGrid, center: float, width: float, slice_z: int) -> np.ndarray:
    """Map one axial slice through an HU window to 8-bit gray.

    [center - width/2, center + width/2] maps linearly onto [0, 255] with
    round-half-up; values outside clamp. Returns an (nx, ny) array.
    """
    if grid.kind is not GridKind.INTENSITY:
        raise ValueError("window_render requires an intensity grid")
    if width <= 0:
        raise ValueError(f"window width must be > 0, got {width}")
    nz = grid.dims[2]
    if not 0 <= slice_z < nz:
        raise ValueError(f"slice {slice_z} outside volume of {nz} slices")
    lo = center - width / 2.0
    sl = grid.data[:, :, slice_z].astype(np.float64)
    return _round_half_up_u8((sl - lo) * (255.0 / width))


def _mask_slice(mask: VoxelGrid, slice_z: int, lesion_label: int) -> np.ndarray:
    nz = mask.dims[2]
    if not 0 <= slice_z < nz:
        raise ValueError(f"slice {slice_z} outside mask of {nz} slices")
    return mask.data[:, :, slice_z] == lesion_label


def overlay_render(
    ct: VoxelGrid,
    slice_z: int,
    center: float = DEFAULT_CENTER,
    width: float = DEFAULT_WIDTH,
    gt_mask: VoxelGrid | None = None,
    pred_mask: VoxelGrid | None = None,
    lesion_label: int = 2,
    alpha: float = 0.5,
) -> np.ndarray:
    """Windowed slice as RGB with lesion overlays blended in.

    Ground-truth voxels tint yellow, predicted voxels blue, each at the
    given alpha; where both masks hit, the prediction is blended on top
    of the already-tinted pixel. Returns (nx, ny, 3) uint8.
    """
    gray = window_render(ct, center, width, slice_z)
    if gt_mask is not None and gt_mask.dims != ct.dims:
        raise ValueError(f"gt mask dims {gt_mask.dims} do not match ct dims {ct.dims}")
    if pred_mask is not None and pred_mask.dims != ct.dims:
        raise ValueError(f"pred mask dims {pred_mask.dims} do not match ct dims {ct.dims}")

    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.float64)
    for mask, color in ((gt_mask, GT_COLOR), (pred_mask, PRED_COLOR)):
        if mask is None:
            continue
        hit = _mask_slice(mask, slice_z, lesion_label)
        for ch in range(3):
            plane = rgb[:, :, ch]
            plane[hit] = (1.0 - alpha) * plane[hit] + alpha * color[ch]
    return _round_half_up_u8(rgb)


def save_png(image: np.ndarray, path: str | os.PathLike) -> None:
    """Write a rendered slice as PNG, rows running along y."""
    from PIL import Image

    if image.ndim == 2:
        pil = Image.fromarray(np.ascontiguousarray(image.T), mode="L")
    elif image.ndim == 3 and image.shape[2] == 3:
        pil = Image.fromarray(np.ascontiguousarray(image.transpose(1, 0, 2)), mode="RGB")
    else:
        raise ValueError(f"expected (nx, ny) or (nx, ny, 3) image, got shape {image.shape}")
    pil.save(path, format="PNG")
