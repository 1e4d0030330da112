"""Hit computation: the cross-run spatial self-join, and the Match table I/O."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import pandas as pd

from .catalog import Catalog, parse_distance
from .zones import build_index, default_zone_height, neighbors_within

logger = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    HIT = "Hit"
    EPHEMERAL = "Ephemeral"
    MASKED = "Masked"
    EDGE = "Edge"
    FRIEND = "Friend"

    def __str__(self):
        return self.value


MISS_VERDICTS = (Verdict.EPHEMERAL.value, Verdict.MASKED.value, Verdict.EDGE.value)
MATCH_COLUMNS = ["run1", "objectID1", "run2", "objectID2", "hitOrMiss",
                 "separation_arcsec", "bundleID"]
MATCH_KEY = ["run1", "objectID1", "run2", "objectID2"]


@dataclass(frozen=True)
class MatchRecord:
    run1: str
    object_id1: int
    run2: str
    object_id2: int
    hit_or_miss: Verdict
    separation: float | None = None
    bundle_id: int = 0


def empty_matches() -> pd.DataFrame:
    return pd.DataFrame({
        "run1": pd.Series(dtype=object),
        "objectID1": pd.Series(dtype=np.int64),
        "run2": pd.Series(dtype=object),
        "objectID2": pd.Series(dtype=np.int64),
        "hitOrMiss": pd.Series(dtype=object),
        "separation_arcsec": pd.Series(dtype=np.float64),
        "bundleID": pd.Series(dtype=np.int64),
    })


def sort_matches(matches: pd.DataFrame) -> pd.DataFrame:
    """Canonical order: (run1, objectID1, run2, objectID2)."""
    if matches.empty:
        return matches.reset_index(drop=True)
    return matches.sort_values(MATCH_KEY, kind="mergesort").reset_index(drop=True)


def records(matches: pd.DataFrame) -> Iterator[MatchRecord]:
    for row in matches[MATCH_COLUMNS].itertuples(index=False):
        sep = None if pd.isna(row[5]) else float(row[5])
        yield MatchRecord(row[0], int(row[1]), row[2], int(row[3]), Verdict(row[4]), sep,
                          int(row[6]))


def search_radius(fn, catalog: Catalog) -> float:
    """Largest classification distance any pair in ``catalog`` can have."""
    if not len(catalog):
        return 0.0
    fn = parse_distance(fn)
    errors = catalog.pos_err
    if hasattr(fn, "upper_bound"):
        return float(fn.upper_bound(float(errors.max())))
    uniq = np.unique(errors)
    if len(uniq) > 2000:
        raise ValueError("custom distance functions need an upper_bound(max_error) method")
    return float(np.max(fn(uniq[:, None], uniq[None, :])))


def compute_hits(catalog: Catalog, fn, zone_height: float | None = None) -> pd.DataFrame:
    """All cross-run pairs closer than their classification distance.

    Parameters
    ----------
    catalog : Catalog
    fn : distance strategy or ``"fixed:<arcsec>"`` / ``"scaled:<k>"``
    zone_height : float, optional
        Index stripe height in arcsec; defaults to the search radius with a
        30 arcsec floor. Must be at least the largest pair distance.

    Returns
    -------
    DataFrame
        Match table of ``Hit`` records, both directions, canonically sorted.
    """
    fn = parse_distance(fn)
    if len(catalog) < 2 or len(catalog.runs) < 2:
        return empty_matches()
    radius = search_radius(fn, catalog)
    if zone_height is None:
        zone_height = default_zone_height(radius)
    index = build_index(catalog.xyz, zone_height)
    i, j, sep = neighbors_within(index, radius)

    codes, _ = pd.factorize(catalog.frame["runID"])
    cross = codes[i] != codes[j]
    i, j, sep = i[cross], j[cross], sep[cross]
    err = catalog.pos_err
    limit = np.asarray(fn(err[i], err[j]), dtype=np.float64)
    hit = sep < limit
    i, j, sep = i[hit], j[hit], sep[hit]

    runs = catalog.run_ids
    ids = catalog.object_ids
    hits = pd.DataFrame({
        "run1": runs[i],
        "objectID1": ids[i],
        "run2": runs[j],
        "objectID2": ids[j],
        "hitOrMiss": Verdict.HIT.value,
        "separation_arcsec": sep,
        "bundleID": np.zeros(len(i), dtype=np.int64),
    })
    logger.info("computed %d hit records", len(hits))
    # catalog rows are key-sorted and (i, j) is lexsorted, so this is canonical
    return hits


def check_symmetry(matches: pd.DataFrame) -> int:
    """Number of Hit records lacking their mirrored record."""
    hits = matches[matches["hitOrMiss"] == Verdict.HIT.value]
    fwd = pd.MultiIndex.from_arrays([hits["run1"], hits["objectID1"], hits["run2"],
                                     hits["objectID2"]])
    rev = pd.MultiIndex.from_arrays([hits["run2"], hits["objectID2"], hits["run1"],
                                     hits["objectID1"]])
    return int((~rev.isin(fwd)).sum())


def write_matches(matches: pd.DataFrame, path_or_buf=None):
    """Write the canonical Match CSV (separation blank for misses)."""
    out = sort_matches(matches[MATCH_COLUMNS])
    return out.to_csv(path_or_buf, index=False, na_rep="", lineterminator="\n")


def read_matches(path_or_buf) -> pd.DataFrame:
    frame = pd.read_csv(path_or_buf, dtype={"run1": str, "run2": str, "hitOrMiss": str},
                        keep_default_na=False, na_values={"separation_arcsec": [""]})
    if list(frame.columns) != MATCH_COLUMNS:
        raise ValueError(f"bad match file header {list(frame.columns)}")
    frame["objectID1"] = frame["objectID1"].astype(np.int64)
    frame["objectID2"] = frame["objectID2"].astype(np.int64)
    frame["bundleID"] = frame["bundleID"].astype(np.int64)
    frame["separation_arcsec"] = frame["separation_arcsec"].astype(np.float64)
    return frame


__all__ = ["MATCH_COLUMNS", "MISS_VERDICTS", "MatchRecord", "Verdict", "check_symmetry",
           "compute_hits", "empty_matches", "read_matches", "records", "search_radius",
           "sort_matches", "write_matches"]
