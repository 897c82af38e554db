"""NIfTI-1 single-file reader and writer for the subset the pipeline needs.

Supported on read: datatype codes 2 (uint8), 4 (int16), 8 (int32) and
16 (float32); 3D volumes, or 4D with a singleton 4th dimension. Headers
are 348 bytes with magic ``n+1\\0``; big-endian files are detected via the
dim[0] in [1, 7] check and byte-swapped. ``vox_offset`` is respected on
read. Files are written little-endian with vox_offset 352, and a
``.nii.gz`` suffix triggers gzip (with a zeroed mtime so outputs are
byte-reproducible).

Only pixdim spacing is consumed; the qform/sform rotation is not applied
and volumes are processed in native index space.
"""

from __future__ import annotations

import gzip
import os
import zlib
from pathlib import Path

import numpy as np

from .grid import GridKind, VoxelGrid

HEADER_SIZE = 348

# (name, base format, shape); offsets follow the NIfTI-1 layout exactly
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4", ()),
    ("data_type", "S10", ()),
    ("db_name", "S18", ()),
    ("extents", "i4", ()),
    ("session_error", "i2", ()),
    ("regular", "S1", ()),
    ("dim_info", "u1", ()),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4", ()),
    ("intent_p2", "f4", ()),
    ("intent_p3", "f4", ()),
    ("intent_code", "i2", ()),
    ("datatype", "i2", ()),
    ("bitpix", "i2", ()),
    ("slice_start", "i2", ()),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4", ()),
    ("scl_slope", "f4", ()),
    ("scl_inter", "f4", ()),
    ("slice_end", "i2", ()),
    ("slice_code", "u1", ()),
    ("xyzt_units", "u1", ()),
    ("cal_max", "f4", ()),
    ("cal_min", "f4", ()),
    ("slice_duration", "f4", ()),
    ("toffset", "f4", ()),
    ("glmax", "i4", ()),
    ("glmin", "i4", ()),
    ("descrip", "S80", ()),
    ("aux_file", "S24", ()),
    ("qform_code", "i2", ()),
    ("sform_code", "i2", ()),
    ("quatern_b", "f4", ()),
    ("quatern_c", "f4", ()),
    ("quatern_d", "f4", ()),
    ("qoffset_x", "f4", ()),
    ("qoffset_y", "f4", ()),
    ("qoffset_z", "f4", ()),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16", ()),
    ("magic", "S4", ()),
]


def _header_dtype(byteorder: str) -> np.dtype:
    return np.dtype([(n, byteorder + f, s) for n, f, s in _HEADER_FIELDS])

_HEADER_LE = _header_dtype("<")
_HEADER_BE = _header_dtype(">")
assert _HEADER_LE.itemsize == HEADER_SIZE

MAGIC = b"n+1\x00"

DTYPE_BY_CODE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
}
CODE_BY_DTYPE = {dt: code for code, dt in DTYPE_BY_CODE.items()}


class NiftiFormatError(ValueError):
    """Raised when a file is not a readable NIfTI-1 volume of the supported subset."""


def _read_bytes(path: str | os.PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        try:
            with gzip.open(path, "rb") as f:
                return f.read()
        except (gzip.BadGzipFile, EOFError, zlib.error) as exc:
            raise NiftiFormatError(f"{path}: corrupt gzip stream: {exc}") from exc
    with open(path, "rb") as f:
        return f.read()


def load_volume(path: str | os.PathLike, expected_kind: GridKind | None = None) -> VoxelGrid:
    """Load a NIfTI-1 volume.

    ``expected_kind`` pins how values are interpreted. Intensity volumes
    get scl_slope/scl_inter applied (slope 0 means unscaled); label
    volumes are read raw and rejected if they hold negative or
    non-integer values. With ``expected_kind=None`` the kind is inferred:
    float data is intensity, integer data with a trivial scaling
    (slope 0 or 1, intercept 0) is a label map, and integer data with a
    nontrivial scaling is intensity.
    """
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: truncated header ({len(raw)} bytes)")

    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_LE)[0]
    swapped = False
    if not 1 <= int(hdr["dim"][0]) <= 7:
        hdr_be = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_BE)[0]
        if 1 <= int(hdr_be["dim"][0]) <= 7:
            hdr, swapped = hdr_be, True
        else:
            raise NiftiFormatError(f"{path}: dim[0] out of range, not a NIfTI-1 header")

    if raw[344:348] != MAGIC:  # read raw: numpy strips the trailing NUL from S4
        raise NiftiFormatError(f"{path}: missing NIfTI-1 single-file magic 'n+1'")

    ndim = int(hdr["dim"][0])
    if ndim == 4 and int(hdr["dim"][4]) == 1:
        pass  # exporter quirk: singleton 4th dimension is accepted
    elif ndim != 3:
        raise NiftiFormatError(f"{path}: unsupported dimensionality dim[0]={ndim}")

    code = int(hdr["datatype"])
    if code not in DTYPE_BY_CODE:
        raise NiftiFormatError(f"{path}: unsupported datatype code {code}")
    dtype = DTYPE_BY_CODE[code]

    dims = tuple(int(d) for d in hdr["dim"][1:4])
    if min(dims) < 1:
        raise NiftiFormatError(f"{path}: non-positive dims {dims}")

    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if not all(np.isfinite(spacing)) or min(spacing) <= 0.0:
        raise NiftiFormatError(f"{path}: invalid pixdim spacing {spacing}")

    vox_offset = int(hdr["vox_offset"])
    if vox_offset < HEADER_SIZE:
        vox_offset = HEADER_SIZE
    need = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) - vox_offset < need:
        raise NiftiFormatError(
            f"{path}: payload holds {len(raw) - vox_offset} bytes, header declares {need}"
        )

    file_dtype = dtype.newbyteorder(">") if swapped else dtype
    data = np.frombuffer(raw, dtype=file_dtype, count=dims[0] * dims[1] * dims[2], offset=vox_offset)
    data = data.astype(dtype, copy=True).reshape(dims, order="F")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope == 0.0 or not np.isfinite(slope):
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0

    kind = expected_kind
    if kind is None:
        if dtype.kind == "f":
            kind = GridKind.INTENSITY
        elif slope == 1.0 and inter == 0.0:
            kind = GridKind.LABEL
        else:
            kind = GridKind.INTENSITY

    if kind is GridKind.LABEL:
        # masks are never rescaled, regardless of the header's scaling fields
        if dtype.kind == "f":
            if data.size and (not np.all(np.isfinite(data)) or np.any(data != np.floor(data))):
                raise NiftiFormatError(f"{path}: label volume contains non-integer values")
            data = data.astype(np.int32)
        if data.size and int(data.min()) < 0:
            raise NiftiFormatError(f"{path}: label volume contains negative values")
        return VoxelGrid(data, spacing, GridKind.LABEL)

    values = data.astype(np.float32)
    if slope != 1.0 or inter != 0.0:
        values = (values * np.float32(slope) + np.float32(inter)).astype(np.float32)
    return VoxelGrid(values, spacing, GridKind.INTENSITY)


def save_volume(
    grid: VoxelGrid,
    path: str | os.PathLike,
    *,
    dtype: np.dtype | str | None = None,
    gzip_level: int = 6,
) -> None:
    """Write a grid as a little-endian NIfTI-1 single file.

    Labels are stored as uint8 when the maximum label fits, else int16;
    intensities as float32 with slope 1 and intercept 0. ``dtype`` may
    name any supported integer code to override the label default (the
    int32 path is only reachable this way).
    """
    path = Path(path)
    if grid.kind is GridKind.LABEL:
        max_label = int(grid.data.max()) if grid.data.size else 0
        if dtype is None:
            out_dtype = np.dtype(np.uint8) if max_label <= 255 else np.dtype(np.int16)
            if max_label > 32767:
                raise ValueError(f"label value {max_label} exceeds the int16 range")
        else:
            out_dtype = np.dtype(dtype)
            if out_dtype not in CODE_BY_DTYPE or out_dtype.kind == "f":
                raise ValueError(f"unsupported label dtype override {out_dtype}")
            if max_label > np.iinfo(out_dtype).max:
                raise ValueError(f"label value {max_label} does not fit {out_dtype}")
    else:
        if dtype is not None and np.dtype(dtype) != np.dtype(np.float32):
            raise ValueError("intensity volumes are always written as float32")
        out_dtype = np.dtype(np.float32)

    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing

    hdr = np.zeros((), dtype=_HEADER_LE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = (3, nx, ny, nz, 1, 1, 1, 1)
    hdr["datatype"] = CODE_BY_DTYPE[out_dtype]
    hdr["bitpix"] = out_dtype.itemsize * 8
    hdr["pixdim"] = (1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = b"ppglkit"
    hdr["sform_code"] = 1
    hdr["srow_x"] = (sx, 0.0, 0.0, 0.0)
    hdr["srow_y"] = (0.0, sy, 0.0, 0.0)
    hdr["srow_z"] = (0.0, 0.0, sz, 0.0)
    hdr["magic"] = MAGIC

    payload = np.ascontiguousarray(grid.data.reshape(-1, order="F")).astype(out_dtype)
    blob = hdr.tobytes() + b"\x00" * 4 + payload.tobytes()

    if path.suffix == ".gz":
        with open(path, "wb") as f:
            # fixed mtime and empty name keep identical grids byte-identical on disk
            with gzip.GzipFile(filename="", mode="wb", fileobj=f, mtime=0, compresslevel=gzip_level) as gz:
                gz.write(blob)
    else:
        with open(path, "wb") as f:
            f.write(blob)
