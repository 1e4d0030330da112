"""Spherical geometry kernel.

Positions are unit 3-vectors. Regions are unions of convexes, and each
convex is an intersection of half-spaces ``dot(normal, p) >= offset``
(spherical caps). Right ascension and declination in degrees only appear
at the I/O boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ARCSEC_PER_RAD = 180.0 * 3600.0 / math.pi
RAD_PER_ARCSEC = 1.0 / ARCSEC_PER_RAD
HALF_TURN_ARCSEC = 648000.0

# Slack on every half-space dot-product comparison.
EPS_GEOM = 1e-12

# Candidate witnesses violating a constraint by less than this are
# considered borderline and trigger the sampling fallback.
_BORDERLINE = 1e-9
_EMPTY_SAMPLES = 100_000
_EMPTY_SEED = 20061201


def radec_to_xyz(ra_deg, dec_deg) -> np.ndarray:
    """Convert (ra, dec) in degrees to unit vectors, shape (..., 3)."""
    ra = np.radians(np.asarray(ra_deg, dtype=np.float64))
    dec = np.radians(np.asarray(dec_deg, dtype=np.float64))
    cos_dec = np.cos(dec)
    return np.stack([cos_dec * np.cos(ra), cos_dec * np.sin(ra), np.sin(dec)], axis=-1)


def xyz_to_radec(xyz) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`radec_to_xyz`; ra is wrapped into [0, 360)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    ra = np.degrees(np.arctan2(y, x)) % 360.0
    # % can round 360 - tiny up to exactly 360.0
    ra = np.where(ra >= 360.0, 0.0, ra)
    dec = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return ra, dec


def separation_rad(a, b) -> np.ndarray:
    """Great-circle separation in radians between broadcastable vector arrays.

    Uses ``atan2(|a x b|, a . b)`` which stays accurate for both tiny and
    near-antipodal separations. The expression is exactly symmetric in its
    arguments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    cx = ay * bz - az * by
    cy = az * bx - ax * bz
    cz = ax * by - ay * bx
    cross = np.sqrt(cx * cx + cy * cy + cz * cz)
    dot = ax * bx + ay * by + az * bz
    return np.arctan2(cross, dot)


def separation_arcsec(a, b) -> np.ndarray:
    return separation_rad(a, b) * ARCSEC_PER_RAD


def _unit(v: Sequence[float]) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in v)
    norm = math.sqrt(x * x + y * y + z * z)
    if not math.isfinite(norm) or norm == 0.0:
        raise ValueError(f"cannot normalize vector {tuple(v)!r}")
    return (x / norm, y / norm, z / norm)


@dataclass(frozen=True)
class SkyPosition:
    """A point on the unit sphere.

    The constructor normalizes its input, so any non-zero vector is accepted.
    """

    x: float
    y: float
    z: float

    def __post_init__(self):
        x, y, z = _unit((self.x, self.y, self.z))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_radec(cls, ra_deg: float, dec_deg: float) -> "SkyPosition":
        if not -90.0 <= dec_deg <= 90.0:
            raise ValueError(f"dec {dec_deg} outside [-90, 90]")
        return cls(*radec_to_xyz(ra_deg, dec_deg))

    @property
    def radec(self) -> tuple[float, float]:
        ra, dec = xyz_to_radec(self.vector)
        return float(ra), float(dec)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def angular_distance(a: SkyPosition, b: SkyPosition) -> float:
    """Great-circle separation of two positions, in arcseconds."""
    return float(separation_arcsec(a.vector, b.vector))


def _as_points(p) -> np.ndarray:
    if isinstance(p, SkyPosition):
        return p.vector
    return np.asarray(p, dtype=np.float64)


@dataclass(frozen=True)
class HalfSpace:
    """The cap ``dot(normal, p) >= offset``; ``offset`` is cos of the opening angle."""

    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit(self.normal))
        offset = float(self.offset)
        if not -1.0 <= offset <= 1.0:
            raise ValueError(f"half-space offset {offset} outside [-1, 1]")
        object.__setattr__(self, "offset", offset)

    @classmethod
    def cap(cls, center: SkyPosition, radius_arcsec: float) -> "HalfSpace":
        theta = min(max(radius_arcsec * RAD_PER_ARCSEC, 0.0), math.pi)
        return cls((center.x, center.y, center.z), math.cos(theta))

    @property
    def angle(self) -> float:
        """Opening angle in radians."""
        return math.acos(self.offset)

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        n = self.normal
        dot = pts[..., 0] * n[0] + pts[..., 1] * n[1] + pts[..., 2] * n[2]
        return dot >= self.offset - EPS_GEOM

    def dilate(self, fuzz_rad: float) -> "HalfSpace":
        return HalfSpace(self.normal, math.cos(min(self.angle + fuzz_rad, math.pi)))

    def contract(self, fuzz_rad: float) -> "HalfSpace":
        return HalfSpace(self.normal, math.cos(max(self.angle - fuzz_rad, 0.0)))

    def to_list(self) -> list[float]:
        return [*self.normal, self.offset]


@dataclass(frozen=True)
class Convex:
    """Intersection of half-spaces; no half-spaces means the whole sphere."""

    halfspaces: tuple[HalfSpace, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for h in self.halfspaces:
            inside &= h.contains(pts)
        return inside

    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.halfspaces:
            return np.empty((0, 3)), np.empty(0)
        normals = np.array([h.normal for h in self.halfspaces])
        offsets = np.array([h.offset for h in self.halfspaces])
        return normals, offsets


@dataclass(frozen=True)
class Region:
    """Union of convexes. An empty convex list is the empty region."""

    convexes: tuple[Convex, ...] = ()
    region_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "convexes", tuple(self.convexes))

    @classmethod
    def full_sphere(cls, region_id: str = "sphere") -> "Region":
        return cls((Convex(()),), region_id)

    @classmethod
    def empty(cls, region_id: str = "empty") -> "Region":
        return cls((), region_id)

    @classmethod
    def cap(cls, center: SkyPosition, radius_arcsec: float, region_id: str = "") -> "Region":
        return cls((Convex((HalfSpace.cap(center, radius_arcsec),)),), region_id)

    def contains(self, points) -> np.ndarray:
        """Vectorized point-in-region test over an array of unit vectors."""
        pts = _as_points(points)
        inside = np.zeros(pts.shape[:-1], dtype=bool)
        for c in self.convexes:
            inside |= c.contains(pts)
        return inside

    def union(self, other: "Region", region_id: str = "") -> "Region":
        return Region(self.convexes + other.convexes, region_id)

    def with_id(self, region_id: str) -> "Region":
        return Region(self.convexes, region_id)

    def to_json(self) -> dict:
        return {
            "regionID": self.region_id,
            "convexes": [[h.to_list() for h in c.halfspaces] for c in self.convexes],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Region":
        convexes = []
        for c in data.get("convexes", []):
            halfspaces = []
            for row in c:
                if len(row) != 4:
                    raise ValueError(f"half-space needs 4 numbers, got {row!r}")
                halfspaces.append(HalfSpace(tuple(row[:3]), row[3]))
            convexes.append(Convex(tuple(halfspaces)))
        return cls(tuple(convexes), str(data.get("regionID", "")))


def inside(p, r: Region):
    """Point-in-region test; returns a bool for a single position."""
    result = r.contains(p)
    return bool(result) if np.ndim(result) == 0 else result


def intersect(r1: Region, r2: Region, region_id: str = "") -> Region:
    """Intersection as pairwise concatenation of convexes, empties pruned."""
    out = []
    for c1 in r1.convexes:
        for c2 in r2.convexes:
            c = Convex(c1.halfspaces + c2.halfspaces)
            if not convex_is_empty(c).empty:
                out.append(c)
    return Region(tuple(out), region_id)


def _check_fuzz(fuzz: float) -> float:
    fuzz = float(fuzz)
    if not fuzz >= 0.0:
        raise ValueError(f"fuzz must be non-negative, got {fuzz}")
    return fuzz * RAD_PER_ARCSEC


def buffer(r: Region, fuzz: float, region_id: str = "") -> Region:
    """Dilate every half-space by ``fuzz`` arcseconds.

    An outer approximation of the true dilation for general convexes,
    exact for single caps. Saturates at the full sphere.
    """
    f = _check_fuzz(fuzz)
    return Region(
        tuple(Convex(tuple(h.dilate(f) for h in c.halfspaces)) for c in r.convexes),
        region_id or r.region_id,
    )


def erode(r: Region, fuzz: float, region_id: str = "") -> Region:
    """Contract every half-space by ``fuzz`` arcseconds (inner approximation)."""
    f = _check_fuzz(fuzz)
    return Region(
        tuple(Convex(tuple(h.contract(f) for h in c.halfspaces)) for c in r.convexes),
        region_id or r.region_id,
    )


class EmptinessVerdict(NamedTuple):
    empty: bool
    method: str
    uncertain: bool = False


def _orthonormal(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    w = np.cross(n, u)
    return u, w


def _circle_intersections(n1, c1, n2, c2) -> list[np.ndarray]:
    """Points p with |p| = 1, n1.p = c1, n2.p = c2."""
    g = float(np.dot(n1, n2))
    det = 1.0 - g * g
    if det < 1e-15:
        return []
    a = (c1 - c2 * g) / det
    b = (c2 - c1 * g) / det
    base = a * n1 + b * n2
    axis = np.cross(n1, n2)
    t2 = (1.0 - float(np.dot(base, base))) / float(np.dot(axis, axis))
    if t2 < -1e-14:
        return []
    t = math.sqrt(max(t2, 0.0))
    pts = [base + t * axis, base - t * axis]
    return [p / np.linalg.norm(p) for p in pts]


def _circle_point(n: np.ndarray, c: float) -> np.ndarray:
    u, _ = _orthonormal(n)
    return c * n + math.sqrt(max(1.0 - c * c, 0.0)) * u


def _boundary_witnesses(normals: np.ndarray, offsets: np.ndarray) -> list[np.ndarray]:
    """Points that must include a member of the convex whenever it is non-empty.

    Every cap center, one point on every boundary circle, and every pairwise
    boundary-circle intersection. A non-empty proper convex either has a
    vertex, or one whole boundary circle inside it, or equals one cap.
    """
    k = len(offsets)
    cands = [normals[i] for i in range(k)]
    cands += [_circle_point(normals[i], offsets[i]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            cands += _circle_intersections(normals[i], offsets[i], normals[j], offsets[j])
    return cands


def convex_is_empty(c: Convex) -> EmptinessVerdict:
    """Decide emptiness of a convex.

    Deterministic pruning (disjoint cap pairs) and a witness search come
    first; if both are inconclusive a fixed-seed sampling pass decides,
    and an unconfirmed verdict is reported as empty with ``uncertain`` set.
    """
    normals, offsets = c._arrays()
    active = offsets > -1.0 + EPS_GEOM
    normals, offsets = normals[active], offsets[active]
    k = len(offsets)
    if k == 0:
        return EmptinessVerdict(False, "trivial")
    angles = np.arccos(np.clip(offsets, -1.0, 1.0))
    gap = separation_rad(normals[:, None, :], normals[None, :, :])
    if np.any(gap - angles[:, None] - angles[None, :] > 1e-12):
        return EmptinessVerdict(True, "disjoint-caps")

    best = -np.inf
    for p in _boundary_witnesses(normals, offsets):
        slack = float(np.min(normals @ p - offsets))
        if slack >= -EPS_GEOM:
            return EmptinessVerdict(False, "witness")
        best = max(best, slack)
    if best < -_BORDERLINE:
        return EmptinessVerdict(True, "witness-search")

    # borderline: numerical degeneracy, settle by sampling
    rng = np.random.default_rng(_EMPTY_SEED)
    pts = rng.normal(size=(_EMPTY_SAMPLES, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    if np.any(c.contains(pts)):
        return EmptinessVerdict(False, "sampling")
    logger.warning("convex emptiness unconfirmed after sampling; treating as empty")
    return EmptinessVerdict(True, "sampling", uncertain=True)


def check_empty(r: Region) -> EmptinessVerdict:
    """Emptiness verdict for a region with the method that decided it."""
    uncertain = False
    for c in r.convexes:
        v = convex_is_empty(c)
        if not v.empty:
            return v
        uncertain |= v.uncertain
    return EmptinessVerdict(True, "all-convexes-empty", uncertain)


def is_empty(r: Region) -> bool:
    return check_empty(r).empty


def _arc_extremes(n, c, center, t_lo, t_hi, u, w) -> float:
    """Smallest dot(center, p) for p on circle (n, c) with angle in [t_lo, t_hi]."""
    s = math.sqrt(max(1.0 - c * c, 0.0))
    cn = c * float(np.dot(center, n))
    cu = float(np.dot(center, u))
    cw = float(np.dot(center, w))

    def dot_at(t):
        return cn + s * (cu * math.cos(t) + cw * math.sin(t))

    vals = [dot_at(t_lo), dot_at(t_hi)]
    t_far = math.atan2(cw, cu) + math.pi
    for shift in (-2 * math.pi, 0.0, 2 * math.pi):
        t = t_far + shift
        if t_lo <= t <= t_hi:
            vals.append(dot_at(t))
    return min(vals)


def bounding_circle(c: Convex) -> tuple[SkyPosition, float]:
    """A circle (center, radius in arcsec) enclosing every point of ``c``.

    The radius is the largest distance from the center to the convex
    boundary, found analytically per boundary arc. Exact for a single cap.
    """
    if convex_is_empty(c).empty:
        raise ValueError("bounding circle of an empty convex")
    normals, offsets = c._arrays()
    keep = offsets > -1.0 + EPS_GEOM
    normals, offsets = normals[keep], offsets[keep]
    k = len(offsets)
    if k == 0:
        return SkyPosition(0.0, 0.0, 1.0), HALF_TURN_ARCSEC
    if k == 1:
        return SkyPosition(*normals[0]), math.acos(offsets[0]) * ARCSEC_PER_RAD

    def member(p, skip=-1):
        slack = normals @ p - offsets
        if skip >= 0:
            slack[skip] = 1.0
        return bool(np.all(slack >= -1e-10))

    # boundary arcs: per circle, the vertex angles lying on it
    frames = [_orthonormal(normals[i]) for i in range(k)]
    on_circle: list[list[float]] = [[] for _ in range(k)]
    vertices = []
    for i in range(k):
        for j in range(i + 1, k):
            for p in _circle_intersections(normals[i], offsets[i], normals[j], offsets[j]):
                if member(p):
                    vertices.append(p)
                    for m in (i, j):
                        u, w = frames[m]
                        on_circle[m].append(math.atan2(float(p @ w), float(p @ u)))

    arcs = []
    for i in range(k):
        u, w = frames[i]
        s = math.sqrt(max(1.0 - offsets[i] ** 2, 0.0))
        ts = sorted(on_circle[i])
        if not ts:
            p = offsets[i] * normals[i] + s * u
            if member(p, skip=i):
                arcs.append((i, 0.0, 2 * math.pi))
            continue
        ts.append(ts[0] + 2 * math.pi)
        for lo, hi in zip(ts[:-1], ts[1:]):
            if hi - lo < 1e-15:
                continue
            mid = 0.5 * (lo + hi)
            p = offsets[i] * normals[i] + s * (u * math.cos(mid) + w * math.sin(mid))
            if member(p, skip=i):
                arcs.append((i, lo, hi))

    if not arcs:
        # degenerate (point-like) convex: fall back to the tightest cap
        i = int(np.argmax(offsets))
        return SkyPosition(*normals[i]), math.acos(offsets[i]) * ARCSEC_PER_RAD

    samples = list(vertices)
    for i, lo, hi in arcs:
        u, w = frames[i]
        s = math.sqrt(max(1.0 - offsets[i] ** 2, 0.0))
        for t in np.linspace(lo, hi, 9):
            samples.append(offsets[i] * normals[i] + s * (u * math.cos(t) + w * math.sin(t)))
    mean = np.sum(samples, axis=0)
    center = mean / np.linalg.norm(mean) if np.linalg.norm(mean) > 1e-9 else normals[0]

    if member(-center):
        return SkyPosition(*center), HALF_TURN_ARCSEC
    min_dot = 1.0
    for i, lo, hi in arcs:
        u, w = frames[i]
        min_dot = min(min_dot, _arc_extremes(normals[i], offsets[i], center, lo, hi, u, w))
    radius = math.acos(max(-1.0, min(1.0, min_dot))) + 1e-9
    # never looser than the tightest single cap
    i = int(np.argmax(offsets))
    cap_radius = math.acos(offsets[i])
    if cap_radius < radius:
        return SkyPosition(*normals[i]), cap_radius * ARCSEC_PER_RAD
    return SkyPosition(*center), min(radius, math.pi) * ARCSEC_PER_RAD


def region_bounding_circles(r: Region) -> list[tuple[SkyPosition, float]]:
    return [bounding_circle(c) for c in r.convexes if not convex_is_empty(c).empty]


# -- convenience constructors used by footprints and tests ----


def radec_box(ra_min: float, ra_max: float, dec_min: float, dec_max: float,
              region_id: str = "") -> Region:
    """Region bounded by two meridians and two parallels (ra span < 180 deg)."""
    span = (ra_max - ra_min) % 360.0
    if not 0.0 < span < 180.0:
        raise ValueError("ra span must be in (0, 180) degrees")
    a, b = math.radians(ra_min), math.radians(ra_max)
    halfspaces = [
        HalfSpace((-math.sin(a), math.cos(a), 0.0), 0.0),
        HalfSpace((math.sin(b), -math.cos(b), 0.0), 0.0),
    ]
    if dec_min > -90.0:
        halfspaces.append(HalfSpace((0.0, 0.0, 1.0), math.sin(math.radians(dec_min))))
    if dec_max < 90.0:
        halfspaces.append(HalfSpace((0.0, 0.0, -1.0), -math.sin(math.radians(dec_max))))
    return Region((Convex(tuple(halfspaces)),), region_id)


def convex_margin_rad(c: Convex, points) -> np.ndarray:
    """Signed angular distance inside the tightest half-space, in radians.

    Positive inside. For interior points this is a lower bound on the
    distance to the convex boundary.
    """
    pts = _as_points(points)
    margin = np.full(pts.shape[:-1], np.inf)
    for h in c.halfspaces:
        ang = separation_rad(pts, np.asarray(h.normal))
        margin = np.minimum(margin, h.angle - ang)
    return margin


def region_margin_rad(r: Region, points) -> np.ndarray:
    """Largest convex margin over the region's convexes (negative outside)."""
    pts = _as_points(points)
    margin = np.full(pts.shape[:-1], -np.inf)
    for c in r.convexes:
        margin = np.maximum(margin, convex_margin_rad(c, pts))
    return margin


def boundary_distance_rad(r: Region, points) -> np.ndarray:
    """Lower bound on the angular distance from each point to any boundary
    circle of any half-space of ``r``."""
    pts = _as_points(points)
    dist = np.full(pts.shape[:-1], np.inf)
    for c in r.convexes:
        for h in c.halfspaces:
            ang = separation_rad(pts, np.asarray(h.normal))
            dist = np.minimum(dist, np.abs(h.angle - ang))
    return dist


def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    pts = rng.normal(size=(n, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sample_cap(center: SkyPosition, radius_arcsec: float, n: int,
               rng: np.random.Generator) -> np.ndarray:
    """Uniform points inside a cap."""
    theta = radius_arcsec * RAD_PER_ARCSEC
    cos_t = rng.uniform(math.cos(theta), 1.0, size=n)
    phi = rng.uniform(0.0, 2 * math.pi, size=n)
    sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, None))
    n_vec = center.vector
    u, w = _orthonormal(n_vec)
    return (cos_t[:, None] * n_vec + sin_t[:, None] * (np.cos(phi)[:, None] * u
                                                       + np.sin(phi)[:, None] * w))


def offset_position(p: np.ndarray, bearing_rad: float, dist_rad: float) -> np.ndarray:
    """Move along the great circle from ``p`` by ``dist_rad`` toward ``bearing``.

    Bearing 0 points north (toward +z), pi/2 east.
    """
    p = np.asarray(p, dtype=np.float64)
    north = np.array([0.0, 0.0, 1.0]) - p[2] * p
    if np.linalg.norm(north) < 1e-12:
        north = np.array([1.0, 0.0, 0.0]) - p[0] * p
    north /= np.linalg.norm(north)
    east = np.cross(north, p)
    direction = math.cos(bearing_rad) * north + math.sin(bearing_rad) * east
    q = math.cos(dist_rad) * p + math.sin(dist_rad) * direction
    return q / np.linalg.norm(q)


def union_all(regions: Iterable[Region], region_id: str = "") -> Region:
    convexes: list[Convex] = []
    for r in regions:
        convexes.extend(r.convexes)
    return Region(tuple(convexes), region_id)


__all__ = [
    "ARCSEC_PER_RAD", "EPS_GEOM", "Convex", "EmptinessVerdict", "HalfSpace", "Region",
    "SkyPosition", "angular_distance", "boundary_distance_rad", "bounding_circle", "buffer",
    "check_empty", "convex_is_empty", "convex_margin_rad", "erode", "inside", "intersect",
    "is_empty", "offset_position", "radec_box", "radec_to_xyz", "region_margin_rad",
    "sample_cap", "sample_sphere", "separation_arcsec", "separation_rad", "union_all",
    "xyz_to_radec",
]
