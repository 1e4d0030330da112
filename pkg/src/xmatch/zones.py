"""Zone index: declination stripes sorted by ra, for the all-pairs spatial join.

Each object falls in zone ``floor((dec + 90) / zone_height)``. A search of
radius ``r <= zone_height`` only needs the object's own zone and its two
neighbours, and within each zone only an ra window of half-width
``asin(sin r / cos dec)``. Near the poles the window is replaced by a full
zone scan.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import separation_arcsec, xyz_to_radec

logger = logging.getLogger(__name__)

DEFAULT_MIN_ZONE_HEIGHT = 30.0
POLAR_LIMIT_DEG = 89.9
_RA_SCALE = float(2**30)  # fixed-point ra resolution ~1e-9 deg
_TURN = 360 * 2**30
_ZONE_SHIFT = 41
_CHUNK_CANDIDATES = 4_000_000


def default_zone_height(max_distance: float) -> float:
    """Zone height (arcsec) covering ``max_distance``, never below 30 arcsec."""
    return max(float(max_distance), DEFAULT_MIN_ZONE_HEIGHT)


@dataclass(frozen=True, eq=False)
class ZoneIndex:
    """Objects bucketed into declination zones and sorted by ra inside each.

    Attributes
    ----------
    zone_height : float
        Stripe height in arcseconds.
    xyz : ndarray, shape (n, 3)
        Unit vectors of the indexed objects, in input order.
    ra, dec : ndarray
        Coordinates in degrees, in input order.
    zone_id : ndarray of int64
        Zone of every object, in input order.
    order : ndarray of int64
        Input positions sorted by (zone, ra, input position).
    """

    zone_height: float
    xyz: np.ndarray
    ra: np.ndarray
    dec: np.ndarray
    zone_id: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return len(self.order)

    @property
    def zones(self) -> dict[int, np.ndarray]:
        """Mapping zoneID -> input positions of its members, sorted by ra."""
        z = self.zone_id[self.order]
        starts = np.flatnonzero(np.r_[True, z[1:] != z[:-1]]) if len(z) else np.empty(0, int)
        ends = np.r_[starts[1:], len(z)]
        return {int(z[s]): self.order[s:e] for s, e in zip(starts, ends)}


def build_index(points, zone_height: float) -> ZoneIndex:
    """Build a :class:`ZoneIndex` over unit vectors (or anything with ``.xyz``).

    Raises
    ------
    ValueError
        If ``zone_height`` is not positive.
    """
    zone_height = float(zone_height)
    if not zone_height > 0:
        raise ValueError(f"zone height must be > 0, got {zone_height}")
    xyz = np.asarray(getattr(points, "xyz", points), dtype=np.float64).reshape(-1, 3)
    ra, dec = xyz_to_radec(xyz)
    h_deg = zone_height / 3600.0
    zone_id = np.floor((dec + 90.0) / h_deg).astype(np.int64)
    order = np.lexsort((np.arange(len(xyz)), ra, zone_id)).astype(np.int64)
    return ZoneIndex(zone_height, xyz, ra, dec, zone_id, order)


def _ra_half_width(abs_dec_deg: np.ndarray, radius_deg: float) -> np.ndarray:
    """Half-width in ra (deg) of a cap of ``radius_deg`` at ``abs_dec_deg``;
    inf where the polar fallback applies."""
    out = np.full(abs_dec_deg.shape, np.inf)
    ok = abs_dec_deg + radius_deg < POLAR_LIMIT_DEG
    s = math.sin(math.radians(radius_deg)) / np.cos(np.radians(abs_dec_deg[ok]))
    out[ok] = np.degrees(np.arcsin(np.minimum(s, 1.0)))
    # windows near half a turn would see both a target and its wrap copy
    out[out >= 179.0] = np.inf
    return out


def neighbors_within(idx: ZoneIndex, radius: float, *, sort: bool = True):
    """All ordered pairs of indexed objects within ``radius`` arcseconds.

    Every unordered pair is reported in both directions; self pairs are not
    reported. Same-run pairs are included.

    Returns
    -------
    i, j : ndarray of int64
        Input positions of the two objects.
    sep : ndarray of float64
        Separation in arcseconds.

    Raises
    ------
    ValueError
        If ``radius`` is not positive or exceeds the index zone height.
    """
    radius = float(radius)
    if not radius > 0:
        raise ValueError(f"search radius must be > 0, got {radius}")
    if radius > idx.zone_height:
        raise ValueError(f"search radius {radius}\" exceeds zone height {idx.zone_height}\"; "
                         "rebuild the index with zone_height >= radius")
    n = len(idx)
    empty = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    if n == 0:
        return empty

    radius_deg = radius / 3600.0
    width = _ra_half_width(np.abs(idx.dec), radius_deg)
    polar = ~np.isfinite(width)

    # wrap copies: a target needs a shifted copy if a query from an adjacent
    # zone could reach across ra = 0/360
    zmax = int(idx.zone_id.max())
    zone_width = np.zeros(zmax + 3)
    finite = ~polar
    np.maximum.at(zone_width, idx.zone_id[finite] + 1, width[finite])
    reach = np.maximum(np.maximum(zone_width[:-2], zone_width[1:-1]), zone_width[2:])
    pad = reach[idx.zone_id] + 1e-6
    lo_copy = np.flatnonzero(idx.ra > 360.0 - pad)  # appear again at ra - 360
    hi_copy = np.flatnonzero(idx.ra < pad)          # appear again at ra + 360

    # exact integer keys: zone in the high bits, fixed-point shifted ra below
    ra_fixed = np.floor(idx.ra * _RA_SCALE).astype(np.int64)
    zone_key = idx.zone_id << _ZONE_SHIFT
    src = np.concatenate([np.arange(n), lo_copy, hi_copy])
    fixed = np.concatenate([ra_fixed + _TURN, ra_fixed[lo_copy], ra_fixed[hi_copy] + 2 * _TURN])
    keys = zone_key[src] + fixed
    korder = np.argsort(keys, kind="stable")
    keys = keys[korder]
    src = src[korder]

    out_i, out_j, out_s = [], [], []
    queries = idx.order
    qzone = idx.zone_id[queries]
    qra = ra_fixed[queries] + _TURN
    qpolar = polar[queries]
    qw = np.where(qpolar, 0.0, width[queries])
    qw = np.ceil(qw * _RA_SCALE).astype(np.int64) + 2

    bounds = []
    for dz in (-1, 0, 1):
        base = (qzone + dz) << _ZONE_SHIFT
        lo_key = np.where(qpolar, base + _TURN, base + qra - qw)
        hi_key = np.where(qpolar, base + 2 * _TURN - 1, base + qra + qw)
        lo = np.searchsorted(keys, lo_key, side="left")
        hi = np.searchsorted(keys, hi_key, side="right")
        bounds.append((lo, hi))
    counts = sum(hi - lo for lo, hi in bounds)

    cum = np.cumsum(counts)
    start = 0
    while start < n:
        limit = (cum[start - 1] if start else 0) + _CHUNK_CANDIDATES
        stop = max(int(np.searchsorted(cum, limit, side="right")), start + 1)
        stop = min(stop, n)
        q = queries[start:stop]
        for lo, hi in bounds:
            lo_c, cnt = lo[start:stop], (hi - lo)[start:stop]
            total = int(cnt.sum())
            if total == 0:
                continue
            qi = np.repeat(q, cnt)
            offsets = np.repeat(lo_c - (np.cumsum(cnt) - cnt), cnt)
            tj = src[np.arange(total) + offsets]
            sep = separation_arcsec(idx.xyz[qi], idx.xyz[tj])
            keep = (sep <= radius) & (qi != tj)
            out_i.append(qi[keep])
            out_j.append(tj[keep])
            out_s.append(sep[keep])
        start = stop

    if not out_i:
        return empty
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    s = np.concatenate(out_s)
    if sort:
        o = np.lexsort((j, i))
        i, j, s = i[o], j[o], s[o]
    logger.debug("zone join radius %.3f\": %d directed pairs", radius, len(i))
    return i, j, s


__all__ = ["DEFAULT_MIN_ZONE_HEIGHT", "ZoneIndex", "build_index",
           "default_zone_height", "neighbors_within"]
