import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmatch.geometry import (
    ARCSEC_PER_RAD,
    RAD_PER_ARCSEC,
    Convex,
    HalfSpace,
    Region,
    SkyPosition,
    angular_distance,
    bounding_circle,
    buffer,
    check_empty,
    erode,
    inside,
    intersect,
    is_empty,
    offset_position,
    radec_box,
    radec_to_xyz,
    sample_cap,
    sample_sphere,
    separation_arcsec,
    xyz_to_radec,
)
from xmatch.oracles import haversine_arcsec

# high-precision haversine of a 0.000278 deg ra step on the equator (mpmath, 50 digits)
ONE_STEP_ARCSEC = 1.0008

P0 = SkyPosition.from_radec(0.0, 0.0)
CAP_1DEG = Region.cap(P0, 3600.0)


def _mp_haversine(ra1, dec1, ra2, dec2):
    mpmath.mp.dps = 40
    r = [mpmath.radians(mpmath.mpf(v)) for v in (ra1, dec1, ra2, dec2)]
    h = (mpmath.sin((r[3] - r[1]) / 2) ** 2
         + mpmath.cos(r[1]) * mpmath.cos(r[3]) * mpmath.sin((r[2] - r[0]) / 2) ** 2)
    return float(mpmath.degrees(2 * mpmath.asin(mpmath.sqrt(h))) * 3600)


class TestAngularDistance:
    def test_identity(self):
        assert angular_distance(P0, P0) == 0.0

    def test_antipode(self):
        assert angular_distance(P0, SkyPosition.from_radec(180.0, 0.0)) == pytest.approx(648000.0)

    def test_small_step_matches_high_precision_oracle(self):
        b = SkyPosition.from_radec(0.000278, 0.0)
        assert abs(_mp_haversine(0, 0, 0.000278, 0) - ONE_STEP_ARCSEC) < 1e-9
        assert abs(angular_distance(P0, b) - ONE_STEP_ARCSEC) < 1e-4

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 360), st.floats(-89.9, 89.9), st.floats(0, 360), st.floats(-89.9, 89.9))
    def test_agrees_with_mpmath(self, ra1, dec1, ra2, dec2):
        a = SkyPosition.from_radec(ra1, dec1)
        b = SkyPosition.from_radec(ra2, dec2)
        assert angular_distance(a, b) == pytest.approx(_mp_haversine(ra1, dec1, ra2, dec2),
                                                       abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 360), st.floats(-90, 90), st.floats(0, 360), st.floats(-90, 90))
    def test_symmetric(self, ra1, dec1, ra2, dec2):
        a = SkyPosition.from_radec(ra1, dec1)
        b = SkyPosition.from_radec(ra2, dec2)
        assert angular_distance(a, b) == angular_distance(b, a)

    def test_haversine_oracle_agrees_on_random_pairs(self, rng):
        a, b = sample_sphere(1000, rng), sample_sphere(1000, rng)
        ra1, dec1 = xyz_to_radec(a)
        ra2, dec2 = xyz_to_radec(b)
        assert np.allclose(separation_arcsec(a, b), haversine_arcsec(ra1, dec1, ra2, dec2),
                           atol=1e-3)


def test_radec_roundtrip(rng):
    pts = sample_sphere(1000, rng)
    ra, dec = xyz_to_radec(pts)
    assert np.all((ra >= 0) & (ra < 360))
    assert np.allclose(radec_to_xyz(ra, dec), pts, atol=1e-15)


def test_position_normalizes():
    p = SkyPosition(2.0, 0.0, 0.0)
    assert p.vector == pytest.approx([1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        SkyPosition(0.0, 0.0, 0.0)


class TestInside:
    def test_full_sphere_and_empty(self, rng):
        pts = sample_sphere(100, rng)
        assert Region.full_sphere().contains(pts).all()
        assert not Region.empty().contains(pts).any()

    def test_cap_boundary_sides(self):
        assert inside(P0, CAP_1DEG)
        moved = SkyPosition(*offset_position(P0.vector, 0.3, math.radians(1.5)))
        assert not inside(moved, CAP_1DEG)

    def test_halfspace_offset_validated(self):
        with pytest.raises(ValueError):
            HalfSpace((0, 0, 1), 1.5)


class TestIntersect:
    def test_with_full_and_empty(self, rng):
        pts = sample_cap(P0, 7200.0, 2000, rng)
        assert np.array_equal(intersect(CAP_1DEG, Region.full_sphere()).contains(pts),
                              CAP_1DEG.contains(pts))
        assert not intersect(CAP_1DEG, Region.empty()).convexes

    def test_lens_is_and(self, rng):
        a = Region.cap(P0, 7200.0)
        b = Region.cap(SkyPosition.from_radec(3.0, 0.0), 7200.0)
        lens = intersect(a, b)
        pts = sample_cap(SkyPosition.from_radec(1.5, 0.0), 4 * 3600.0, 10_000, rng)
        assert np.array_equal(lens.contains(pts), a.contains(pts) & b.contains(pts))


class TestBufferErode:
    def test_cap_buffer_exact(self):
        grown = buffer(CAP_1DEG, 3600.0)
        (h,) = grown.convexes[0].halfspaces
        assert abs(h.angle - math.radians(2.0)) < 1e-12

    def test_cap_erode_exact(self):
        shrunk = erode(Region.cap(P0, 7200.0), 3600.0)
        (h,) = shrunk.convexes[0].halfspaces
        assert abs(h.angle - math.radians(1.0)) < 1e-12

    def test_erode_zero_is_identity(self, rng):
        box = radec_box(10, 14, -2, 2)
        pts = radec_to_xyz(rng.uniform(9, 15, 5000), rng.uniform(-3, 3, 5000))
        assert np.array_equal(erode(box, 0.0).contains(pts), box.contains(pts))

    def test_containment(self, rng):
        box = radec_box(10, 14, -2, 2)
        pts = radec_to_xyz(rng.uniform(9, 15, 20_000), rng.uniform(-3, 3, 20_000))
        inner, base, outer = (erode(box, 60.0).contains(pts), box.contains(pts),
                              buffer(box, 60.0).contains(pts))
        assert not np.any(inner & ~base)
        assert not np.any(base & ~outer)

    def test_buffer_covers_boundary_neighbourhood(self, rng):
        # wedge of two half-spaces; sample points within 60" of the region
        wedge = Region((Convex((HalfSpace((0, 0, 1), 0.0), HalfSpace((0, 1, 0), 0.0))),))
        pts = sample_sphere(200_000, rng)
        near = pts[(pts[:, 2] > -math.sin(60 * RAD_PER_ARCSEC))
                   & (pts[:, 1] > -math.sin(60 * RAD_PER_ARCSEC))]
        # exact distance to the wedge for points just outside one or both walls
        z, y = near[:, 2], near[:, 1]
        outside_z = np.clip(-np.arcsin(np.clip(z, -1, 1)), 0, None)
        outside_y = np.clip(-np.arcsin(np.clip(y, -1, 1)), 0, None)
        within = np.hypot(outside_z, outside_y) * ARCSEC_PER_RAD <= 60.0
        assert buffer(wedge, 60.0).contains(near[within]).all()

    def test_negative_fuzz_rejected(self):
        with pytest.raises(ValueError):
            buffer(CAP_1DEG, -1.0)
        with pytest.raises(ValueError):
            erode(CAP_1DEG, -1.0)


class TestIsEmpty:
    def test_trivial(self):
        assert is_empty(Region.empty())
        assert not is_empty(Region.full_sphere())

    def test_opposing_halfspaces(self):
        c = Convex((HalfSpace((0, 0, 1), 0.9), HalfSpace((0, 0, -1), 0.9)))
        assert is_empty(Region((c,)))

    def test_lens_not_empty(self):
        a = Region.cap(P0, 7200.0)
        b = Region.cap(SkyPosition.from_radec(3.0, 0.0), 7200.0)
        assert not is_empty(intersect(a, b))
        far = Region.cap(SkyPosition.from_radec(5.0, 0.0), 7200.0)
        assert is_empty(intersect(a, far))

    def test_triple_without_common_point(self):
        # three caps pairwise overlapping around a hole
        caps = [Region.cap(SkyPosition.from_radec(ra, dec), 3.1 * 3600)
                for ra, dec in ((0, 0), (6, 0), (3, 5.2))]
        r = intersect(intersect(caps[0], caps[1]), caps[2])
        assert is_empty(r) == (not r.contains(radec_to_xyz(3.0, 1.73)).any())

    def test_verdict_reports_method(self):
        v = check_empty(Region.full_sphere())
        assert not v.empty and not v.uncertain


class TestBoundingCircle:
    def test_single_cap(self):
        center, radius = bounding_circle(CAP_1DEG.convexes[0])
        assert angular_distance(center, P0) < 1e-6
        assert radius == pytest.approx(3600.0, abs=1e-6)

    def test_full_sphere(self):
        _, radius = bounding_circle(Convex(()))
        assert radius == 648000.0

    def test_lens_contains_samples(self, rng):
        a = Region.cap(P0, 7200.0)
        b = Region.cap(SkyPosition.from_radec(3.0, 0.0), 7200.0)
        lens = intersect(a, b)
        center, radius = bounding_circle(lens.convexes[0])
        pts = sample_cap(SkyPosition.from_radec(1.5, 0.0), 3 * 3600.0, 50_000, rng)
        pts = pts[lens.contains(pts)]
        assert len(pts) > 1000
        assert separation_arcsec(pts, center.vector).max() <= radius + 1e-6

    def test_box(self, rng):
        box = radec_box(0, 10, -5, 5)
        center, radius = bounding_circle(box.convexes[0])
        pts = radec_to_xyz(rng.uniform(0, 10, 20_000), rng.uniform(-5, 5, 20_000))
        assert separation_arcsec(pts, center.vector).max() <= radius + 1e-6

    def test_empty_convex_raises(self):
        with pytest.raises(ValueError):
            bounding_circle(Convex((HalfSpace((0, 0, 1), 0.9), HalfSpace((0, 0, -1), 0.9))))


def test_region_json_roundtrip(rng):
    r = buffer(radec_box(1, 3, -1, 1, "box"), 10.0, "box+10")
    back = Region.from_json(json.loads(json.dumps(r.to_json())))
    pts = radec_to_xyz(rng.uniform(0, 4, 5000), rng.uniform(-2, 2, 5000))
    assert back.region_id == "box+10"
    assert np.array_equal(back.contains(pts), r.contains(pts))


def test_radec_box_rejects_wide_span():
    with pytest.raises(ValueError):
        radec_box(0, 200, -1, 1)
