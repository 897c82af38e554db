"""Gate checks: eight numbered criteria with stated tolerances and budgets.

Each test appends one PASS/FAIL line to ACCEPTANCE_LINES, which the
conftest terminal-summary hook prints after the run.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import label_grid
from oracles import bfs_components, partition_key, sorted_stats
from ppglkit.annotations import BoxAnnotation, SlabConfig, extend_to_slab, rasterize_ground_truth
from ppglkit.components import SizeThreshold, connected_components
from ppglkit.evaluation import (
    DistributionStats,
    MatchResult,
    dataset_metrics,
    evaluate_pair,
    percent,
)
from ppglkit.grid import GridKind, VoxelGrid
from ppglkit.nifti import load_volume, save_volume
from ppglkit.phantom import (
    SuiteConfig,
    ellipsoid_voxel_count,
    generate_phantom,
    perturb_to_prediction,
    sample_case,
)

ACCEPTANCE_LINES = []


@contextmanager
def criterion(number, label):
    t0 = time.perf_counter()
    try:
        yield
    except Exception:
        ACCEPTANCE_LINES.append(f"acceptance {number}: FAIL  {label}")
        raise
    elapsed = time.perf_counter() - t0
    ACCEPTANCE_LINES.append(f"acceptance {number}: PASS  {label} ({elapsed:.1f}s)")


def warm_up_labeling():
    m = np.zeros((8, 8, 8), np.uint8)
    m[2:4, 2:4, 2:4] = 2
    connected_components(label_grid(m), 2)


def counts_result(scan_id, tp, fp, fn):
    tp_ids = frozenset(range(1, tp + 1))
    return MatchResult(
        scan_id=scan_id,
        tp_gt_ids=tp_ids,
        fn_gt_ids=frozenset(range(tp + 1, tp + fn + 1)),
        fp_pred_ids=frozenset(range(1001, 1001 + fp)),
        pairs=tuple((g, g, 1) for g in sorted(tp_ids)),
    )


def test_1_count_fixture_metrics():
    """153 lesions, 98 hits, 55 misses; 59 FPs unfiltered vs 42 filtered."""
    with criterion(1, "count fixture: 62.4%/70.0% precision, 64.1% recall"):
        t0 = time.perf_counter()
        for fp_total, want_precision in ((59, "62.4%"), (42, "70.0%")):
            rows = []
            for i in range(98):
                rows.append(counts_result(f"hit{i:03d}", 1, 1 if i < fp_total else 0, 0))
            for i in range(55):
                rows.append(counts_result(f"miss{i:03d}", 0, 0, 1))
            # through the serialized form, as a stored batch would arrive
            payload = json.dumps([r.to_dict() for r in rows])
            restored = [MatchResult.from_dict(d) for d in json.loads(payload)]
            rep = dataset_metrics(restored, threshold_voxels=250 if fp_total == 42 else 0)
            assert (rep.n_gt, rep.n_tp, rep.n_fp, rep.n_fn) == (153, 98, fp_total, 55)
            want_raw = {59: 98 / 157, 42: 98 / 140}[fp_total]
            assert abs(rep.precision - want_raw) * 100 < 0.05
            assert abs(rep.recall - 98 / 153) * 100 < 0.05
            assert percent(rep.precision) == want_precision
            assert percent(rep.recall) == "64.1%"
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0, f"{elapsed:.2f}s"


def test_2_threshold_removes_exactly_small_fps():
    """Filtering at 250 voxels drops the sub-250 blobs and nothing else."""
    with criterion(2, "size filter removes exactly the sub-250-voxel FPs"):
        t0 = time.perf_counter()
        cfg = SuiteConfig(n_spurious_small=(1, 3))
        total_removed = 0
        for index in range(50):
            spec, pspec = sample_case(cfg, 424201, index)
            ct, anns, gt = generate_phantom(spec)
            pred, want = perturb_to_prediction(gt, pspec, SizeThreshold(250))
            r0 = evaluate_pair(gt, pred, SizeThreshold(0), scan_id=spec.scan_id)
            r250 = evaluate_pair(gt, pred, SizeThreshold(250), scan_id=spec.scan_id)
            n_small = sum(
                1
                for b in pspec.spurious_blobs
                if ellipsoid_voxel_count(b, spec.dims) < 250
            )
            assert r250.tp == r0.tp, spec.scan_id
            assert r250.fn == r0.fn, spec.scan_id
            assert r0.fp - r250.fp == n_small, spec.scan_id
            assert (r250.tp, r250.fp, r250.fn) == want, spec.scan_id
            total_removed += n_small
        assert total_removed >= 50  # every scan injected at least one small blob
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"{elapsed:.1f}s"


def test_3_phantom_triples_match_closed_form():
    with criterion(3, "200 phantom/perturbation pairs match closed-form triples"):
        t0 = time.perf_counter()
        cfg = SuiteConfig()
        thr = SizeThreshold(250)
        for index in range(200):
            spec, pspec = sample_case(cfg, 424203, index)
            ct, anns, gt = generate_phantom(spec)
            pred, want = perturb_to_prediction(gt, pspec, thr)
            got = evaluate_pair(gt, pred, thr, scan_id=spec.scan_id)
            assert (got.tp, got.fp, got.fn) == want, spec.scan_id
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0, f"{elapsed:.1f}s"


def test_4_labeling_matches_bfs_oracle():
    with criterion(4, "1000 random masks: union-find equals BFS flood fill"):
        warm_up_labeling()
        t0 = time.perf_counter()
        rng = np.random.default_rng(424204)
        for i in range(1000):
            dims = tuple(int(s) for s in rng.integers(1, 21, 3))
            mask = (rng.random(dims) < rng.uniform(0.1, 0.7)).astype(np.uint8)
            g = label_grid(mask)
            for connectivity in (6, 26):
                got = partition_key(
                    [c.voxels for c in connected_components(g, 1, connectivity)]
                )
                want = partition_key(bfs_components(mask, 1, connectivity))
                assert got == want, (i, connectivity, dims)
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"{elapsed:.1f}s"


def test_5_slab_geometry():
    with criterion(5, "slab voxel count = z-span times box area, clamped at edges"):
        rng = np.random.default_rng(424205)
        cfg = SlabConfig()
        n_interior = n_clamped = 0
        for _ in range(300):
            nz = int(rng.integers(7, 41))
            x0, y0 = int(rng.integers(0, 40)), int(rng.integers(0, 40))
            x1 = x0 + int(rng.integers(0, 48 - x0))
            y1 = y0 + int(rng.integers(0, 48 - y0))
            z = int(rng.integers(0, nz))
            a = BoxAnnotation("s", "L1", z, x0, y0, x1, y1)
            slab = extend_to_slab(a, cfg, nz)
            area = a.area_voxels
            z_lo, z_hi = max(0, z - 3), min(nz - 1, z + 3)
            span = z_hi - z_lo + 1
            assert slab.voxel_count == span * area
            if 3 <= z <= nz - 4:
                assert slab.voxel_count == 7 * area
                n_interior += 1
            else:
                assert span < 7
                n_clamped += 1
            g = rasterize_ground_truth([a], None, (48, 48, nz), (1.0, 1.0, 1.0), cfg)
            assert int((np.asarray(g.data) == 2).sum()) == slab.voxel_count
        assert n_interior > 0 and n_clamped > 0


def test_6_patient_level_statistics():
    with criterion(6, "patient stats match sort oracle; 53-scan recall fixture"):
        rng = np.random.default_rng(424206)
        for _ in range(50):
            rows = []
            for i in range(int(rng.integers(2, 60))):
                n_gt = int(rng.integers(0, 5))
                tp = int(rng.integers(0, n_gt + 1))
                fp = int(rng.integers(0, 4))
                rows.append(counts_result(f"s{i:03d}", tp, fp, n_gt - tp))
            rep = dataset_metrics(rows)
            precs = [r.tp / (r.tp + r.fp) for r in rows if r.tp + r.fp > 0]
            recs = [r.tp / r.n_gt for r in rows if r.n_gt > 0]
            for stats, values in ((rep.patient_precision, precs), (rep.patient_recall, recs)):
                if not values:
                    assert stats is None
                    continue
                want = sorted_stats(values)
                for field, value in want.items():
                    got = getattr(stats, field)
                    assert got == pytest.approx(value, rel=1e-12, abs=1e-12), field

        rows = [counts_result(f"z{i:02d}", 0, 0, 1) for i in range(13)]
        rows += [counts_result(f"h{i:02d}", 1, 0, 1) for i in range(13)]
        rows += [counts_result(f"f{i:02d}", 1, 0, 0) for i in range(27)]
        st = dataset_metrics(rows).patient_recall
        assert st.n == 53
        assert percent(st.median) == "100.0%"
        assert percent(st.iqr_lo) == "50.0%"
        assert percent(st.iqr_hi) == "100.0%"


def test_7_format_round_trip(tmp_path):
    with criterion(7, "save/load identity for all four datatypes, plain and gzip"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(424207)
        cases = []
        for _ in range(6):
            dims = tuple(int(s) for s in rng.integers(2, 28, 3))
            spacing = tuple(float(np.float32(rng.uniform(0.3, 3.0))) for _ in range(3))
            cases.append(
                (rng.integers(0, 256, dims).astype(np.uint8), GridKind.LABEL, None, spacing)
            )
            cases.append(
                (rng.integers(0, 3000, dims).astype(np.int16), GridKind.LABEL, None, spacing)
            )
            cases.append(
                (
                    rng.integers(0, 2**20, dims).astype(np.int32),
                    GridKind.LABEL,
                    np.int32,
                    spacing,
                )
            )
            cases.append(
                (
                    rng.normal(0.0, 300.0, dims).astype(np.float32),
                    GridKind.INTENSITY,
                    None,
                    spacing,
                )
            )
        for i, (data, kind, dtype, spacing) in enumerate(cases):
            grid = VoxelGrid(data, spacing, kind)
            for suffix in (".nii", ".nii.gz"):
                path = tmp_path / f"case{i}{suffix}"
                save_volume(grid, path, dtype=dtype)
                back = load_volume(path)
                assert back.kind is kind
                assert back.dims == grid.dims
                assert back.spacing == spacing
                assert np.array_equal(np.asarray(back.data), np.asarray(grid.data)), (
                    i,
                    suffix,
                )
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"{elapsed:.1f}s"


BIG_DIMS = (512, 512, 400)
BALL_R = 18


def ball_stencil(r=BALL_R):
    xs = np.arange(-r, r + 1)
    return (xs[:, None, None] ** 2 + xs[None, :, None] ** 2 + xs[None, None, :] ** 2) <= r * r


def blob_mask(centers, ball, extra_speckle=0, seed=0):
    m = np.zeros(BIG_DIMS, np.uint8, order="F")
    r = BALL_R
    for cx, cy, cz in centers:
        m[cx - r : cx + r + 1, cy - r : cy + r + 1, cz - r : cz + r + 1][ball] = 2
    if extra_speckle:
        rng = np.random.default_rng(seed)
        flat = m.reshape(-1, order="F")
        idx = rng.integers(0, flat.size, extra_speckle)
        flat[idx[flat[idx] == 0]] = 2
    return VoxelGrid(m, (1.0, 1.0, 1.0), GridKind.LABEL)


def grid_cells():
    return [
        (64 + 128 * ix, 64 + 128 * iy, 66 + 133 * iz)
        for ix in range(4)
        for iy in range(4)
        for iz in range(3)
    ]


def test_8_performance_at_scale():
    with criterion(8, "512x512x400 labeling < 10 s; 53-scan batch < 5 min"):
        warm_up_labeling()
        ball = ball_stencil()
        cells = grid_cells()

        # part one: a ~1% foreground mask, blobs plus speckle
        g = blob_mask(cells[:42], ball, extra_speckle=120_000, seed=424208)
        share = (np.asarray(g.data) == 2).mean()
        assert 0.008 < share < 0.013, share
        t0 = time.perf_counter()
        comps = connected_components(g, 2)
        t_label = time.perf_counter() - t0
        assert len(comps) >= 42
        assert t_label < 10.0, f"{t_label:.1f}s"
        del g, comps

        # part two: 53 scans of that size, 39 hits, 4 spurious, 3 dropped each
        gt = blob_mask(cells[:42], ball)
        pred_centers = [(x + 2, y + 2, z + 2) for x, y, z in cells[:39]] + cells[44:48]
        pred = blob_mask(pred_centers, ball)
        thr = SizeThreshold(250)
        scan_ids = [f"scan_{i:03d}" for i in range(53)]

        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(
                pool.map(lambda sid: evaluate_pair(gt, pred, thr, scan_id=sid), scan_ids)
            )
        t_batch = time.perf_counter() - t0
        for r in results:
            assert (r.tp, r.fp, r.fn) == (39, 4, 3), r.scan_id
        rep = dataset_metrics(results, threshold_voxels=250)
        assert (rep.n_tp, rep.n_fp, rep.n_fn) == (53 * 39, 53 * 4, 53 * 3)
        assert t_batch < 300.0, f"{t_batch:.1f}s"
