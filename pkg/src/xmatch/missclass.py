"""Run-pair overlaps, miss enumeration, and Edge/Masked/Ephemeral verdicts."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .catalog import Catalog, RunMetadata, pair_distance, parse_distance
from .geometry import (
    RAD_PER_ARCSEC,
    Convex,
    Region,
    bounding_circle,
    buffer,
    convex_is_empty,
    erode,
    radec_to_xyz,
    separation_rad,
)
from .match import MATCH_COLUMNS, Verdict, empty_matches

logger = logging.getLogger(__name__)

MISS_COLUMNS = ["run1", "objectID", "ra_deg", "dec_deg", "run2"]


class ConsistencyError(RuntimeError):
    """Inputs of a stage disagree with each other (e.g. a miss with no overlap)."""


@dataclass(frozen=True, eq=False)
class OverlapRecord:
    """Overlap of ``run1`` with the buffered footprint of ``run2``.

    The edge zone is ``region`` minus ``eroded``; it is kept as that pair
    rather than as an explicit region.
    """

    run1: str
    run2: str
    region: Region
    eroded: Region
    run2_masks: Region
    pair_distance: float

    @property
    def edge_region_id(self) -> str:
        return f"edge:{self.run1}:{self.run2}"

    def in_overlap(self, xyz) -> np.ndarray:
        return self.region.contains(xyz)

    def in_edge(self, xyz) -> np.ndarray:
        return self.region.contains(xyz) & ~self.eroded.contains(xyz)

    def to_json(self) -> dict:
        return {
            "run1": self.run1,
            "run2": self.run2,
            "overlapRegionID": self.region.region_id,
            "overlapRegionEdgeID": self.edge_region_id,
            "run2MasksID": self.run2_masks.region_id,
            "pairDistance_arcsec": self.pair_distance,
            "overlapRegion": self.region.to_json(),
            "erodedRegion": self.eroded.to_json(),
            "run2Masks": self.run2_masks.to_json(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "OverlapRecord":
        return cls(
            run1=str(data["run1"]),
            run2=str(data["run2"]),
            region=Region.from_json(data["overlapRegion"]),
            eroded=Region.from_json(data["erodedRegion"]),
            run2_masks=Region.from_json(data["run2Masks"]),
            pair_distance=float(data["pairDistance_arcsec"]),
        )


def write_overlaps(overlaps: Iterable[OverlapRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([o.to_json() for o in overlaps], fh, indent=1)
        fh.write("\n")


def read_overlaps(path) -> list[OverlapRecord]:
    with open(path, encoding="utf-8") as fh:
        return [OverlapRecord.from_json(d) for d in json.load(fh)]


def _circles(region: Region):
    out = []
    for c in region.convexes:
        if convex_is_empty(c).empty:
            continue
        center, radius = bounding_circle(c)
        out.append((c, center.vector, radius * RAD_PER_ARCSEC))
    return out


def compute_overlaps(runs: Sequence[RunMetadata], fn) -> list[OverlapRecord]:
    """One :class:`OverlapRecord` per ordered run pair with a non-empty overlap.

    Convex pairs whose bounding circles are further apart than the pair
    distance are skipped before the exact intersection.
    """
    fn = parse_distance(fn)
    runs = sorted(runs, key=lambda r: r.run_id)
    ids = [r.run_id for r in runs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate runID in run metadata")
    circles = {r.run_id: _circles(r.footprint) for r in runs}
    overlaps = []
    for a in runs:
        for b in runs:
            if a.run_id == b.run_id:
                continue
            d = pair_distance(fn, a, b)
            d_rad = d * RAD_PER_ARCSEC
            convexes = []
            for ca, center_a, rad_a in circles[a.run_id]:
                for cb, center_b, rad_b in circles[b.run_id]:
                    gap = float(separation_rad(center_a, center_b))
                    if gap > rad_a + rad_b + d_rad + 1e-9:
                        continue
                    dilated = buffer(Region((cb,)), d).convexes[0]
                    c = Convex(ca.halfspaces + dilated.halfspaces)
                    if not convex_is_empty(c).empty:
                        convexes.append(c)
            if not convexes:
                continue
            region = Region(tuple(convexes), f"overlap:{a.run_id}:{b.run_id}")
            overlaps.append(OverlapRecord(
                run1=a.run_id,
                run2=b.run_id,
                region=region,
                eroded=erode(region, d, f"eroded:{a.run_id}:{b.run_id}"),
                run2_masks=b.masks.with_id(f"masks:{b.run_id}"),
                pair_distance=d,
            ))
    logger.info("%d overlapping ordered run pairs", len(overlaps))
    return overlaps


def _hit_lookup(matches: pd.DataFrame) -> dict[tuple[str, str], np.ndarray]:
    hits = matches[matches["hitOrMiss"] == Verdict.HIT.value]
    return {key: np.unique(grp["objectID1"].to_numpy())
            for key, grp in hits.groupby(["run1", "run2"], sort=False)}


def empty_misses() -> pd.DataFrame:
    return pd.DataFrame({
        "run1": pd.Series(dtype=object),
        "objectID": pd.Series(dtype=np.int64),
        "ra_deg": pd.Series(dtype=np.float64),
        "dec_deg": pd.Series(dtype=np.float64),
        "run2": pd.Series(dtype=object),
    })


def compute_misses(catalog: Catalog, matches: pd.DataFrame,
                   overlaps: Iterable[OverlapRecord]) -> pd.DataFrame:
    """Run1 objects inside a run1-run2 overlap that have no Hit against run2.

    Returns a Miss table (``run1, objectID, ra_deg, dec_deg, run2``) sorted
    by (run1, objectID, run2).
    """
    hit_ids = _hit_lookup(matches)
    frame = catalog.frame
    run_rows = {run: np.flatnonzero(catalog.run_ids == run) for run in catalog.runs}
    parts = []
    for ov in overlaps:
        rows = run_rows.get(ov.run1)
        if rows is None or not len(rows):
            continue
        rows = rows[ov.in_overlap(catalog.xyz[rows])]
        ids = catalog.object_ids[rows]
        matched = hit_ids.get((ov.run1, ov.run2))
        if matched is not None:
            keep = ~np.isin(ids, matched)
            rows, ids = rows[keep], ids[keep]
        if not len(rows):
            continue
        parts.append(pd.DataFrame({
            "run1": ov.run1,
            "objectID": ids,
            "ra_deg": frame["ra_deg"].to_numpy()[rows],
            "dec_deg": frame["dec_deg"].to_numpy()[rows],
            "run2": ov.run2,
        }))
    if not parts:
        return empty_misses()
    misses = pd.concat(parts, ignore_index=True)
    misses = misses.sort_values(["run1", "objectID", "run2"], kind="mergesort")
    logger.info("%d misses", len(misses))
    return misses.reset_index(drop=True)


def classify_misses(misses: pd.DataFrame, overlaps: Iterable[OverlapRecord]) -> pd.DataFrame:
    """Turn each miss into one Edge, Masked, or Ephemeral match record.

    The edge test runs first, masks are tested on what remains, and the
    residue is ephemeral.

    Raises
    ------
    ConsistencyError
        If a miss names a run pair that has no overlap record.
    """
    by_pair = {(o.run1, o.run2): o for o in overlaps}
    if misses.empty:
        return empty_matches()
    verdict = np.empty(len(misses), dtype=object)
    for (run1, run2), grp in misses.groupby(["run1", "run2"], sort=False):
        ov = by_pair.get((run1, run2))
        if ov is None:
            raise ConsistencyError(f"miss for run pair ({run1!r}, {run2!r}) has no overlap record")
        rows = grp.index.to_numpy()
        xyz = radec_to_xyz(grp["ra_deg"].to_numpy(), grp["dec_deg"].to_numpy())
        edge = ov.in_edge(xyz)
        masked = ~edge & ov.run2_masks.contains(xyz)
        out = np.full(len(rows), Verdict.EPHEMERAL.value, dtype=object)
        out[masked] = Verdict.MASKED.value
        out[edge] = Verdict.EDGE.value
        verdict[misses.index.get_indexer(rows)] = out
    result = pd.DataFrame({
        "run1": misses["run1"].to_numpy(),
        "objectID1": misses["objectID"].to_numpy(dtype=np.int64),
        "run2": misses["run2"].to_numpy(),
        "objectID2": np.zeros(len(misses), dtype=np.int64),
        "hitOrMiss": verdict,
        "separation_arcsec": np.nan,
        "bundleID": np.zeros(len(misses), dtype=np.int64),
    })
    return result[MATCH_COLUMNS]


def write_misses(misses: pd.DataFrame, path_or_buf=None):
    return misses[MISS_COLUMNS].to_csv(path_or_buf, index=False, lineterminator="\n")


def read_misses(path_or_buf) -> pd.DataFrame:
    frame = pd.read_csv(path_or_buf, dtype={"run1": str, "run2": str}, keep_default_na=False)
    if list(frame.columns) != MISS_COLUMNS:
        raise ValueError(f"bad miss file header {list(frame.columns)}")
    if frame.empty:
        return empty_misses()
    frame["objectID"] = frame["objectID"].astype(np.int64)
    return frame


def verdict_counts(matches: pd.DataFrame) -> dict[str, int]:
    counts = matches["hitOrMiss"].value_counts()
    return {v.value: int(counts.get(v.value, 0)) for v in Verdict}


__all__ = ["ConsistencyError", "MISS_COLUMNS", "OverlapRecord", "classify_misses",
           "compute_misses", "compute_overlaps", "read_misses", "read_overlaps",
           "verdict_counts", "write_misses", "write_overlaps"]
