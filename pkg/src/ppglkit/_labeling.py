"""Connected-component labeling kernels.

Both backends implement the same contract: given the sorted linear
indices of the foreground voxels of an (nx, ny, nz) grid (linear index
= x + nx*(y + ny*z)), return for each foreground voxel the linear index
of the smallest voxel in its component. That canonical root makes the
two backends bit-comparable and gives the caller a stable tie-break key.

The compiled backend is a raster-order union-find pass that keeps only
two int32 label planes alive instead of a full label volume, so peak
memory stays proportional to the slice size plus the foreground count.
The pure-numpy backend builds the causal neighbor edges vectorially and
converges min-labels by repeated hooking and pointer jumping. Set
PPGLKIT_NO_NUMBA=1 to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


# Causal neighbor offsets: strictly earlier in raster order (z, then y, then x).
_OFFSETS_6 = ((-1, 0, 0), (0, -1, 0), (0, 0, -1))
_OFFSETS_26 = (
    (-1, 0, 0),
    (-1, -1, 0),
    (0, -1, 0),
    (1, -1, 0),
    (-1, -1, -1),
    (0, -1, -1),
    (1, -1, -1),
    (-1, 0, -1),
    (0, 0, -1),
    (1, 0, -1),
    (-1, 1, -1),
    (0, 1, -1),
    (1, 1, -1),
)


@njit(cache=True, nogil=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        up = parent[i]
        parent[i] = root
        i = up
    return root


@njit(cache=True, nogil=True)
def _label_fg_numba(fg_idx, nx, ny, nz, use26):
    n_fg = fg_idx.shape[0]
    plane = nx * ny

    # Rolling label planes; ids are 1-based, 0 means background.
    buf_prev = np.zeros(plane, np.int32)
    buf_curr = np.zeros(plane, np.int32)

    cap = 1024
    parent = np.empty(cap, np.int32)
    min_lin = np.empty(cap, np.int64)
    n_ids = 1
    vox_id = np.empty(n_fg, np.int32)

    z_curr = np.int64(-2)
    s_prev = 0  # fg_idx range [s_prev, s_curr) holds the slice in buf_prev
    s_curr = 0  # fg_idx range [s_curr, k) holds the slice in buf_curr

    for k in range(n_fg):
        lin = fg_idx[k]
        z = lin // plane
        rem = lin - z * plane
        y = rem // nx
        x = rem - y * nx

        if z != z_curr:
            if z == z_curr + 1:
                # buf_prev drops out of the causal window: scrub its cells
                for j in range(s_prev, s_curr):
                    r = fg_idx[j] % plane
                    buf_prev[r] = 0
                tmp = buf_prev
                buf_prev = buf_curr
                buf_curr = tmp
                s_prev = s_curr
            else:
                # gap in z: neither plane is adjacent any more
                for j in range(s_prev, s_curr):
                    r = fg_idx[j] % plane
                    buf_prev[r] = 0
                for j in range(s_curr, k):
                    r = fg_idx[j] % plane
                    buf_curr[r] = 0
                s_prev = k
            s_curr = k
            z_curr = z

        best = 0
        off = y * nx + x

        nb = 0 if x == 0 else buf_curr[off - 1]
        if nb != 0:
            best = _find(parent, nb)
        if y > 0:
            nb = buf_curr[off - nx]
            if nb != 0:
                r = _find(parent, nb)
                if best == 0:
                    best = r
                elif r != best:
                    if min_lin[r] < min_lin[best]:
                        parent[best] = r
                        best = r
                    else:
                        parent[r] = best
            if use26:
                if x > 0:
                    nb = buf_curr[off - nx - 1]
                    if nb != 0:
                        r = _find(parent, nb)
                        if best == 0:
                            best = r
                        elif r != best:
                            if min_lin[r] < min_lin[best]:
                                parent[best] = r
                                best = r
                            else:
                                parent[r] = best
                if x + 1 < nx:
                    nb = buf_curr[off - nx + 1]
                    if nb != 0:
                        r = _find(parent, nb)
                        if best == 0:
                            best = r
                        elif r != best:
                            if min_lin[r] < min_lin[best]:
                                parent[best] = r
                                best = r
                            else:
                                parent[r] = best
        if use26:
            ylo = y - 1 if y > 0 else y
            yhi = y + 1 if y + 1 < ny else y
            xlo = x - 1 if x > 0 else x
            xhi = x + 1 if x + 1 < nx else x
            for yy in range(ylo, yhi + 1):
                base = yy * nx
                for xx in range(xlo, xhi + 1):
                    nb = buf_prev[base + xx]
                    if nb != 0:
                        r = _find(parent, nb)
                        if best == 0:
                            best = r
                        elif r != best:
                            if min_lin[r] < min_lin[best]:
                                parent[best] = r
                                best = r
                            else:
                                parent[r] = best
        else:
            nb = buf_prev[off]
            if nb != 0:
                r = _find(parent, nb)
                if best == 0:
                    best = r
                elif r != best:
                    if min_lin[r] < min_lin[best]:
                        parent[best] = r
                        best = r
                    else:
                        parent[r] = best

        if best == 0:
            if n_ids == cap:
                cap *= 2
                new_parent = np.empty(cap, np.int32)
                new_min = np.empty(cap, np.int64)
                new_parent[:n_ids] = parent[:n_ids]
                new_min[:n_ids] = min_lin[:n_ids]
                parent = new_parent
                min_lin = new_min
            parent[n_ids] = n_ids
            min_lin[n_ids] = lin
            best = n_ids
            n_ids += 1
        buf_curr[off] = best
        vox_id[k] = best

    out = np.empty(n_fg, np.int64)
    for k in range(n_fg):
        out[k] = min_lin[_find(parent, vox_id[k])]
    return out


def _label_fg_numpy(fg_idx, nx, ny, nz, use26):
    n_fg = fg_idx.shape[0]
    x = fg_idx % nx
    t = fg_idx // nx
    y = t % ny
    z = t // ny
    plane = nx * ny

    edges_a = []
    edges_b = []
    for dx, dy, dz in _OFFSETS_26 if use26 else _OFFSETS_6:
        ok = np.ones(n_fg, dtype=bool)
        if dx < 0:
            ok &= x > 0
        elif dx > 0:
            ok &= x < nx - 1
        if dy < 0:
            ok &= y > 0
        elif dy > 0:
            ok &= y < ny - 1
        if dz < 0:
            ok &= z > 0
        src = np.flatnonzero(ok)
        nb_lin = fg_idx[src] + (dx + dy * nx + dz * plane)
        pos = np.searchsorted(fg_idx, nb_lin)
        pos[pos == n_fg] = 0  # safe: fg_idx[0] can never equal an out-of-range neighbor here
        hit = fg_idx[pos] == nb_lin
        edges_a.append(src[hit])
        edges_b.append(pos[hit])

    lab = np.arange(n_fg, dtype=np.int64)
    a = np.concatenate(edges_a) if edges_a else np.empty(0, np.int64)
    b = np.concatenate(edges_b) if edges_b else np.empty(0, np.int64)
    if a.size:
        while True:
            before = lab.copy()
            m = np.minimum(lab[a], lab[b])
            np.minimum.at(lab, a, m)
            np.minimum.at(lab, b, m)
            while True:
                jumped = lab[lab]
                if np.array_equal(jumped, lab):
                    break
                lab = jumped
            if np.array_equal(lab, before):
                break
    return fg_idx[lab]


def backend_name(backend: str | None = None) -> str:
    """Resolve which labeling backend a call will use."""
    if backend is None:
        if os.environ.get("PPGLKIT_NO_NUMBA", "") not in ("", "0"):
            return "numpy"
        return "numba" if HAVE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown labeling backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    return backend


def label_foreground(
    fg_idx: np.ndarray,
    nx: int,
    ny: int,
    nz: int,
    connectivity: int = 26,
    backend: str | None = None,
) -> np.ndarray:
    """Label foreground voxels, returning each voxel's component root.

    ``fg_idx`` must be the sorted int64 linear indices of the foreground.
    The result is aligned with ``fg_idx``; entry k is the smallest linear
    index in the component containing voxel fg_idx[k].
    """
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    fg_idx = np.ascontiguousarray(fg_idx, dtype=np.int64)
    if fg_idx.size == 0:
        return np.empty(0, np.int64)
    use26 = connectivity == 26
    if backend_name(backend) == "numba":
        return _label_fg_numba(fg_idx, nx, ny, nz, use26)
    return _label_fg_numpy(fg_idx, nx, ny, nz, use26)
