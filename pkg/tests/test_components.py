import numpy as np
import pytest

from conftest import intensity_grid, label_grid, random_mask
from oracles import bfs_components, partition_key
from ppglkit._labeling import backend_name, label_foreground
from ppglkit.components import (
    SizeThreshold,
    components_to_json,
    connected_components,
    filter_by_size,
    size_percentile,
)

BACKENDS = ["numba", "numpy"]


def package_partition(grid, target, connectivity, backend=None):
    comps = connected_components(grid, target, connectivity, backend)
    return partition_key([c.voxels for c in comps])


class TestLabeling:
    def test_empty_mask(self):
        assert connected_components(label_grid(np.zeros((4, 4, 4), np.uint8)), 2) == []

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_two_cubes(self, backend):
        m = np.zeros((12, 12, 12), np.uint8)
        m[1:4, 1:4, 1:4] = 2
        m[8:11, 8:11, 8:11] = 2
        comps = connected_components(label_grid(m), 2, 26, backend)
        assert [c.voxel_count for c in comps] == [27, 27]
        assert [c.component_id for c in comps] == [1, 2]
        # tie broken by smaller minimum linear index
        assert comps[0].bbox.x_min == 1
        assert comps[1].bbox.x_min == 8

    @pytest.mark.parametrize("backend", BACKENDS)
    @pytest.mark.parametrize("connectivity", [6, 26])
    def test_matches_bfs_oracle_randomized(self, rng, backend, connectivity):
        for _ in range(60):
            m = random_mask(rng, max_side=14, p_fg=float(rng.uniform(0.15, 0.6)))
            got = package_partition(label_grid(m), 1, connectivity, backend)
            want = partition_key(bfs_components(m, 1, connectivity))
            assert got == want

    @pytest.mark.parametrize("connectivity", [6, 26])
    def test_backends_bit_identical(self, rng, connectivity):
        for _ in range(25):
            m = random_mask(rng, max_side=16, p_fg=0.45)
            g = label_grid(m)
            a = connected_components(g, 1, connectivity, "numba")
            b = connected_components(g, 1, connectivity, "numpy")
            assert len(a) == len(b)
            for ca, cb in zip(a, b):
                assert ca.component_id == cb.component_id
                assert ca.voxel_count == cb.voxel_count
                assert ca.bbox == cb.bbox
                assert ca.centroid == cb.centroid
                assert np.array_equal(ca.voxels, cb.voxels)

    def test_env_flag_switches_backend(self, monkeypatch):
        monkeypatch.setenv("PPGLKIT_NO_NUMBA", "1")
        assert backend_name() == "numpy"
        monkeypatch.setenv("PPGLKIT_NO_NUMBA", "0")
        assert backend_name() == "numba"
        monkeypatch.delenv("PPGLKIT_NO_NUMBA")
        assert backend_name() == "numba"

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            label_foreground(np.array([0], np.int64), 2, 2, 2, 26, backend="gpu")

    def test_bad_connectivity_rejected(self):
        with pytest.raises(ValueError):
            connected_components(label_grid(np.ones((2, 2, 2), np.uint8)), 1, 18)

    def test_ordering_by_size_then_position(self):
        m = np.zeros((20, 5, 5), np.uint8)
        m[0:2, 0:2, 0:2] = 1   # 8 voxels, starts at lin 0
        m[10:14, 0:2, 0:2] = 1  # 16 voxels
        m[17:19, 0:2, 0:2] = 1  # 8 voxels, later position
        comps = connected_components(label_grid(m), 1)
        assert [c.voxel_count for c in comps] == [16, 8, 8]
        assert comps[1].bbox.x_min == 0
        assert comps[2].bbox.x_min == 17

    def test_component_measurements(self):
        m = np.zeros((9, 7, 5), np.uint8)
        m[2:5, 1:4, 1:3] = 2
        g = label_grid(m, spacing=(0.5, 2.0, 3.0))
        (c,) = connected_components(g, 2)
        assert c.voxel_count == 3 * 3 * 2
        assert c.volume_mm3 == pytest.approx(18 * 0.5 * 2.0 * 3.0)
        assert (c.bbox.x_min, c.bbox.x_max) == (2, 4)
        assert (c.bbox.y_min, c.bbox.y_max) == (1, 3)
        assert (c.bbox.z_min, c.bbox.z_max) == (1, 2)
        assert c.centroid == pytest.approx((3.0, 2.0, 1.5))

    @pytest.mark.parametrize("connectivity", [6, 26])
    def test_partition_properties(self, rng, connectivity):
        for _ in range(10):
            m = random_mask(rng, max_side=15, p_fg=0.5)
            g = label_grid(m)
            comps = connected_components(g, 1, connectivity)
            total = sum(c.voxel_count for c in comps)
            assert total == int((m == 1).sum())
            all_idx = np.concatenate([c.voxels for c in comps]) if comps else np.empty(0)
            assert len(np.unique(all_idx)) == total  # pairwise disjoint
            for c in comps:
                assert c.voxel_count == len(c.voxels)
                xs = c.voxels % m.shape[0]
                assert xs.min() == c.bbox.x_min and xs.max() == c.bbox.x_max
                assert c.bbox.x_min <= c.centroid[0] <= c.bbox.x_max
                assert c.bbox.y_min <= c.centroid[1] <= c.bbox.y_max
                assert c.bbox.z_min <= c.centroid[2] <= c.bbox.z_max

    def test_26_no_more_components_than_6(self, rng):
        for _ in range(10):
            m = random_mask(rng, max_side=12, p_fg=0.3)
            g = label_grid(m)
            n26 = len(connected_components(g, 1, 26))
            n6 = len(connected_components(g, 1, 6))
            assert n26 <= n6

    def test_target_label_selects(self):
        m = np.zeros((6, 6, 6), np.uint8)
        m[0:2, 0:2, 0:2] = 1
        m[4:6, 4:6, 4:6] = 2
        g = label_grid(m)
        assert len(connected_components(g, 1)) == 1
        assert len(connected_components(g, 2)) == 1
        assert connected_components(g, 3) == []

    def test_intensity_grid_rejected(self):
        with pytest.raises(ValueError):
            connected_components(intensity_grid(np.zeros((2, 2, 2))), 1)


class TestSizeFilter:
    def test_threshold_zero_is_identity(self):
        m = np.zeros((20, 4, 4), np.uint8)
        m[1:3, 0:2, 0:2] = 1
        m[6:7, 0:1, 0:1] = 1
        m[10:13, :, :] = 1
        comps = connected_components(label_grid(m), 1)
        assert filter_by_size(comps, SizeThreshold(0)) == comps

    def test_threshold_is_inclusive(self):
        m = np.zeros((60, 10, 10), np.uint8)
        m[0:1, 0:10, 0:10] = 1                  # 100
        m[3:6, 0:10, 0:5] = 1; m[3:5, 0:10, 5:10] = 1   # 150 + 100 = 250
        m[10:14, 0:10, 0:10] = 1                # 400
        comps = connected_components(label_grid(m), 1)
        assert sorted(c.voxel_count for c in comps) == [100, 250, 400]
        kept = filter_by_size(comps, SizeThreshold(250))
        assert sorted(c.voxel_count for c in kept) == [250, 400]

    def test_antitone_in_threshold(self, rng):
        m = random_mask(rng, max_side=18, p_fg=0.4)
        comps = connected_components(label_grid(m), 1)
        prev = None
        for t in (0, 1, 2, 4, 8, 16):
            kept = {c.component_id for c in filter_by_size(comps, SizeThreshold(t))}
            if prev is not None:
                assert kept <= prev
            prev = kept

    def test_order_preserved(self):
        m = np.zeros((30, 4, 4), np.uint8)
        m[1:3, :, :] = 1
        m[6:7, 0:2, 0:2] = 1
        m[10:14, :, :] = 1
        comps = connected_components(label_grid(m), 1)
        kept = filter_by_size(comps, SizeThreshold(5))
        assert [c.component_id for c in kept] == sorted(c.component_id for c in kept)

    def test_min_mm3_mode(self):
        m = np.zeros((10, 4, 4), np.uint8)
        m[1:3, 0:2, 0:2] = 1  # 8 voxels
        comps = connected_components(label_grid(m, spacing=(2.0, 2.0, 2.0)), 1)
        assert filter_by_size(comps, SizeThreshold(0, min_mm3=64.0)) == comps
        assert filter_by_size(comps, SizeThreshold(0, min_mm3=64.1)) == []

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            SizeThreshold(-1)


class TestSizePercentile:
    def test_singleton(self):
        for p in (0, 15, 50, 100):
            assert size_percentile([5], p) == 5

    def test_uniform_ranks(self):
        assert size_percentile(list(range(1, 101)), 15) == 15

    def test_zero_is_minimum(self):
        assert size_percentile([7, 3, 9], 0) == 3

    def test_hundred_is_maximum(self):
        assert size_percentile([7, 3, 9], 100) == 9

    def test_matches_sort_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 40))
            sizes = rng.integers(1, 1000, n).tolist()
            p = float(rng.uniform(0, 100))
            want_rank = max(1, int(np.ceil(p / 100 * n)))
            assert size_percentile(sizes, p) == sorted(sizes)[want_rank - 1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            size_percentile([], 15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            size_percentile([1], 101)


def test_json_serialization():
    m = np.zeros((6, 6, 6), np.uint8)
    m[1:3, 1:3, 1:3] = 2
    comps = connected_components(label_grid(m, spacing=(1.0, 1.0, 2.0)), 2)
    d = components_to_json("s1", comps)
    assert d["schema_version"] == 1
    assert d["scan_id"] == "s1"
    (entry,) = d["components"]
    assert entry["id"] == 1
    assert entry["voxel_count"] == 8
    assert entry["volume_mm3"] == pytest.approx(16.0)
    assert entry["bbox"] == {"x_min": 1, "x_max": 2, "y_min": 1, "y_max": 2, "z_min": 1, "z_max": 2}
    assert entry["centroid"] == [1.5, 1.5, 1.5]
