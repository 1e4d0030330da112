import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmatch.geometry import radec_to_xyz, sample_sphere
from xmatch.oracles import brute_force_pairs
from xmatch.zones import build_index, default_zone_height, neighbors_within


def _pairs(idx, radius):
    i, j, _ = neighbors_within(idx, radius)
    return set(zip(i.tolist(), j.tolist()))


class TestBuildIndex:
    def test_empty(self):
        idx = build_index(np.empty((0, 3)), 30.0)
        assert idx.zones == {}
        assert neighbors_within(idx, 1.0)[0].size == 0

    def test_south_pole_zone_zero(self):
        idx = build_index(radec_to_xyz([0.0], [-90.0]), 30.0)
        assert list(idx.zones) == [0]

    def test_partition(self, rng):
        idx = build_index(sample_sphere(1000, rng), 3600.0)
        assert sum(len(v) for v in idx.zones.values()) == 1000

    def test_bad_height(self):
        with pytest.raises(ValueError):
            build_index(np.zeros((1, 3)) + [1, 0, 0], 0.0)

    def test_default_height(self):
        assert default_zone_height(1.0) == 30.0
        assert default_zone_height(300.0) == 300.0


class TestNeighbors:
    def test_close_pair_both_directions(self):
        pts = radec_to_xyz([10.0, 10.0 + 0.5 / 3600], [0.0, 0.0])
        i, j, sep = neighbors_within(build_index(pts, 30.0), 1.0)
        assert set(zip(i.tolist(), j.tolist())) == {(0, 1), (1, 0)}
        assert np.allclose(sep, 0.5)

    def test_far_pair_nothing(self):
        pts = radec_to_xyz([10.0, 10.0 + 2.0 / 3600], [0.0, 0.0])
        assert _pairs(build_index(pts, 30.0), 1.0) == set()

    def test_wraparound(self):
        pts = radec_to_xyz([359.9999, 0.0001], [0.0, 0.0])
        assert _pairs(build_index(pts, 30.0), 1.0) == {(0, 1), (1, 0)}

    def test_radius_above_zone_height_rejected(self):
        idx = build_index(radec_to_xyz([0.0], [0.0]), 30.0)
        with pytest.raises(ValueError, match="zone"):
            neighbors_within(idx, 31.0)
        with pytest.raises(ValueError):
            neighbors_within(idx, 0.0)

    def test_uniform_matches_oracle(self, rng):
        pts = sample_sphere(2000, rng)
        # 2000 points give few pairs at 30", so cluster half of them
        pts[:1000] = radec_to_xyz(rng.uniform(0, 0.05, 1000), rng.uniform(0, 0.05, 1000))
        idx = build_index(pts, 30.0)
        assert _pairs(idx, 30.0) == brute_force_pairs(pts, 30.0)

    def test_polar_cap_matches_oracle(self, rng):
        pts = radec_to_xyz(rng.uniform(0, 360, 1500), rng.uniform(89.97, 90.0, 1500))
        assert _pairs(build_index(pts, 30.0), 30.0) == brute_force_pairs(pts, 30.0)

    def test_sorted_output(self, rng):
        pts = radec_to_xyz(rng.uniform(0, 0.1, 500), rng.uniform(0, 0.1, 500))
        i, j, _ = neighbors_within(build_index(pts, 60.0), 60.0)
        assert np.all(np.diff(i * len(pts) + j) > 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-89.5, 89.5), st.floats(0, 360))
    def test_random_clusters_match_oracle(self, seed, dec, ra):
        rng = np.random.default_rng(seed)
        pts = radec_to_xyz((ra + rng.uniform(-0.02, 0.02, 200)) % 360,
                           np.clip(dec + rng.uniform(-0.02, 0.02, 200), -90, 90))
        assert _pairs(build_index(pts, 60.0), 60.0) == brute_force_pairs(pts, 60.0)

    def test_permutation_invariant(self, rng):
        pts = radec_to_xyz(rng.uniform(0, 0.1, 400), rng.uniform(0, 0.1, 400))
        perm = rng.permutation(400)
        a = _pairs(build_index(pts, 60.0), 60.0)
        b = {(perm[i], perm[j]) for i, j in _pairs(build_index(pts[perm], 60.0), 60.0)}
        assert a == b
