"""Friends-of-friends closure of the Hit graph, bundle IDs and bundle statistics.

A bundle is a connected component of the undirected Hit graph. Bundle IDs
are dense, starting at 1, in the lexicographic order of each bundle's
smallest (runID, objectID) member.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .catalog import Catalog
from .geometry import ARCSEC_PER_RAD, SkyPosition, separation_rad, xyz_to_radec
from .match import MATCH_COLUMNS, MATCH_KEY, Verdict, sort_matches

logger = logging.getLogger(__name__)

MEMBER_COLUMNS = ["runID", "objectID", "bundleID"]
BUNDLE_COLUMNS = ["bundleID", "memberCount", "hits", "ephemeral", "masked", "edge",
                  "raAvg_deg", "decAvg_deg", "posVar_arcsec2"]


@dataclass(frozen=True)
class Bundle:
    bundle_id: int
    members: frozenset
    hits: int
    misses: dict = field(default_factory=dict)
    position_average: SkyPosition | None = None
    position_variance: float = 0.0
    per_run_counts: dict = field(default_factory=dict)


def min_labels(n: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Label every node 0..n-1 with the smallest node of its component.

    Hook-and-compress over the edge list (u, v): roots are hooked onto the
    smaller root across each edge, then pointer jumping flattens the trees.
    """
    labels = np.arange(n, dtype=np.int64)
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    while len(u):
        lu, lv = labels[u], labels[v]
        differ = lu != lv
        if not differ.any():
            break
        lu, lv = lu[differ], lv[differ]
        m = np.minimum(lu, lv)
        np.minimum.at(labels, lu, m)
        np.minimum.at(labels, lv, m)
        while True:
            nxt = labels[labels]
            if np.array_equal(nxt, labels):
                break
            labels = nxt
        # edges already inside one component never matter again
        keep = labels[u] != labels[v]
        u, v = u[keep], v[keep]
    return labels


def _node_table(matches: pd.DataFrame, extra: pd.DataFrame | None = None) -> pd.DataFrame:
    """Every (runID, objectID) referenced by a record, key-sorted."""
    linked = matches["objectID2"].to_numpy() > 0
    parts = [
        pd.DataFrame({"runID": matches["run1"].to_numpy(),
                      "objectID": matches["objectID1"].to_numpy()}),
        pd.DataFrame({"runID": matches["run2"].to_numpy()[linked],
                      "objectID": matches["objectID2"].to_numpy()[linked]}),
    ]
    if extra is not None:
        parts.append(extra[["runID", "objectID"]])
    nodes = pd.concat(parts, ignore_index=True).drop_duplicates()
    nodes["objectID"] = nodes["objectID"].astype(np.int64)
    return nodes.sort_values(["runID", "objectID"], kind="mergesort").reset_index(drop=True)


def _locate(nodes: pd.DataFrame, run, obj) -> np.ndarray:
    index = pd.MultiIndex.from_arrays([nodes["runID"], nodes["objectID"]])
    pos = index.get_indexer(pd.MultiIndex.from_arrays([np.asarray(run, dtype=object),
                                                       np.asarray(obj, dtype=np.int64)]))
    if np.any(pos < 0):
        raise KeyError("record references an object outside the node table")
    return pos


def _label_nodes(nodes: pd.DataFrame, u: np.ndarray, v: np.ndarray) -> pd.DataFrame:
    labels = min_labels(len(nodes), u, v)
    _, dense = np.unique(labels, return_inverse=True)
    members = nodes.copy()
    members["bundleID"] = dense.astype(np.int64) + 1
    return members


def _hit_edges(nodes: pd.DataFrame, matches: pd.DataFrame):
    hits = matches[matches["hitOrMiss"].isin([Verdict.HIT.value, Verdict.FRIEND.value])]
    u = _locate(nodes, hits["run1"], hits["objectID1"])
    v = _locate(nodes, hits["run2"], hits["objectID2"])
    return u, v


def assign_bundle_ids(matches: pd.DataFrame, members: pd.DataFrame) -> pd.DataFrame:
    """Copy of ``matches`` with each record's bundleID taken from its
    (run1, objectID1) member."""
    out = matches.copy()
    if out.empty:
        return out
    pos = _locate(members, out["run1"], out["objectID1"])
    out["bundleID"] = members["bundleID"].to_numpy()[pos]
    return out


def compute_bundles(matches: pd.DataFrame) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Connected components of the Hit graph.

    Objects that only appear in miss records become singleton bundles.

    Returns
    -------
    members : DataFrame
        ``runID, objectID, bundleID`` for every referenced object, key-sorted.
    matches : DataFrame
        The input records with ``bundleID`` filled in.
    """
    nodes = _node_table(matches)
    u, v = _hit_edges(nodes, matches)
    members = _label_nodes(nodes, u, v)
    logger.info("%d objects in %d bundles", len(members),
                members["bundleID"].max() if len(members) else 0)
    return members, assign_bundle_ids(matches, members)


def merge_on_insert(members: pd.DataFrame, new_matches: pd.DataFrame) -> pd.DataFrame:
    """Fold the records of a newly inserted run into an existing bundle partition.

    New Hit records may join objects to existing bundles or merge two
    bundles. IDs are reassigned by the same smallest-member rule, so the
    result equals a batch recomputation over all hits.
    """
    nodes = _node_table(new_matches, extra=members)
    labelled = nodes.merge(members, on=["runID", "objectID"], how="left", sort=False)
    old_ids = labelled["bundleID"].to_numpy()
    # tie every old member to the first member of its old bundle
    known = np.flatnonzero(~np.isnan(old_ids.astype(np.float64)))
    first = pd.Series(known).groupby(old_ids[known]).transform("min").to_numpy()
    u_new, v_new = _hit_edges(nodes, new_matches)
    u = np.concatenate([known, u_new])
    v = np.concatenate([first, v_new])
    return _label_nodes(nodes, u, v)


def materialize_friends(matches: pd.DataFrame, members: pd.DataFrame,
                        catalog: Catalog | None = None) -> pd.DataFrame:
    """Friend records completing each bundle to a full directed graph.

    One record per ordered pair of distinct co-members that has no Hit
    record in that direction. Separations come from ``catalog`` when given.
    """
    sizes = members["bundleID"].value_counts()
    big = sizes.index[sizes.to_numpy() >= 3]
    group = members[members["bundleID"].isin(big)]
    if group.empty:
        return _empty_like(matches)
    pairs = group.merge(group, on="bundleID", suffixes=("1", "2"))
    pairs = pairs[(pairs["runID1"] != pairs["runID2"]) | (pairs["objectID1"] != pairs["objectID2"])]
    pairs = pairs.rename(columns={"runID1": "run1", "runID2": "run2"})
    linked = matches[matches["objectID2"] > 0][MATCH_KEY]
    pairs = pairs.merge(linked, on=MATCH_KEY, how="left", indicator=True)
    pairs = pairs[pairs["_merge"] == "left_only"]
    friends = pd.DataFrame({
        "run1": pairs["run1"].to_numpy(),
        "objectID1": pairs["objectID1"].to_numpy(dtype=np.int64),
        "run2": pairs["run2"].to_numpy(),
        "objectID2": pairs["objectID2"].to_numpy(dtype=np.int64),
        "hitOrMiss": Verdict.FRIEND.value,
        "separation_arcsec": np.nan,
        "bundleID": pairs["bundleID"].to_numpy(dtype=np.int64),
    })
    if catalog is not None and len(friends):
        a = catalog.locate(friends["run1"], friends["objectID1"])
        b = catalog.locate(friends["run2"], friends["objectID2"])
        if np.any(a < 0) or np.any(b < 0):
            raise KeyError("friend record references an object missing from the catalog")
        friends["separation_arcsec"] = separation_rad(catalog.xyz[a], catalog.xyz[b]) * ARCSEC_PER_RAD
    return sort_matches(friends)


def _empty_like(matches: pd.DataFrame) -> pd.DataFrame:
    return matches.iloc[0:0][MATCH_COLUMNS].copy()


def bundle_statistics(members: pd.DataFrame, matches: pd.DataFrame,
                      catalog: Catalog) -> pd.DataFrame:
    """Per-bundle counts and position statistics, sorted by bundleID.

    ``hits`` counts directed Hit records (Friend records excluded); the miss
    columns count raw miss records of each kind. ``posVar_arcsec2`` is the
    mean squared separation of members from their normalized mean vector.
    """
    n = int(members["bundleID"].max()) if len(members) else 0
    bid = members["bundleID"].to_numpy() - 1
    counts = np.bincount(bid, minlength=n)

    def tally(verdict):
        sel = matches["hitOrMiss"].to_numpy() == verdict
        return np.bincount(matches["bundleID"].to_numpy()[sel] - 1, minlength=n)[:n]

    pos = catalog.locate(members["runID"], members["objectID"])
    if np.any(pos < 0):
        raise KeyError("bundle member missing from the catalog")
    xyz = catalog.xyz[pos]
    total = np.stack([np.bincount(bid, weights=xyz[:, k], minlength=n) for k in range(3)], axis=1)
    mean = total / np.linalg.norm(total, axis=1, keepdims=True)
    dev = separation_rad(xyz, mean[bid]) * ARCSEC_PER_RAD
    var = np.bincount(bid, weights=dev * dev, minlength=n) / np.maximum(counts, 1)
    ra, dec = xyz_to_radec(mean)
    return pd.DataFrame({
        "bundleID": np.arange(1, n + 1, dtype=np.int64),
        "memberCount": counts.astype(np.int64),
        "hits": tally(Verdict.HIT.value),
        "ephemeral": tally(Verdict.EPHEMERAL.value),
        "masked": tally(Verdict.MASKED.value),
        "edge": tally(Verdict.EDGE.value),
        "raAvg_deg": ra,
        "decAvg_deg": dec,
        "posVar_arcsec2": var,
    })


def bundle_records(stats: pd.DataFrame, members: pd.DataFrame) -> list[Bundle]:
    """Record view of :func:`bundle_statistics` output (small inputs)."""
    grouped = {b: g for b, g in members.groupby("bundleID")}
    out = []
    for row in stats.itertuples(index=False):
        g = grouped[row.bundleID]
        out.append(Bundle(
            bundle_id=int(row.bundleID),
            members=frozenset(zip(g["runID"], g["objectID"].astype(int))),
            hits=int(row.hits),
            misses={"Ephemeral": int(row.ephemeral), "Masked": int(row.masked),
                    "Edge": int(row.edge)},
            position_average=SkyPosition.from_radec(row.raAvg_deg, row.decAvg_deg),
            position_variance=float(row.posVar_arcsec2),
            per_run_counts=g["runID"].value_counts().sort_index().to_dict(),
        ))
    return out


def size_histogram(members: pd.DataFrame) -> dict[int, int]:
    sizes = members["bundleID"].value_counts().value_counts().sort_index()
    return {int(k): int(v) for k, v in sizes.items()}


def write_bundles(stats: pd.DataFrame, path_or_buf=None):
    return stats[BUNDLE_COLUMNS].to_csv(path_or_buf, index=False, lineterminator="\n")


def read_bundles(path_or_buf) -> pd.DataFrame:
    frame = pd.read_csv(path_or_buf)
    if list(frame.columns) != BUNDLE_COLUMNS:
        raise ValueError(f"bad bundle file header {list(frame.columns)}")
    return frame


def write_members(members: pd.DataFrame, path_or_buf=None):
    return members[MEMBER_COLUMNS].to_csv(path_or_buf, index=False, lineterminator="\n")


def read_members(path_or_buf) -> pd.DataFrame:
    frame = pd.read_csv(path_or_buf, dtype={"runID": str}, keep_default_na=False)
    if list(frame.columns) != MEMBER_COLUMNS:
        raise ValueError(f"bad member file header {list(frame.columns)}")
    return frame


__all__ = ["BUNDLE_COLUMNS", "Bundle", "MEMBER_COLUMNS", "assign_bundle_ids", "bundle_records",
           "bundle_statistics", "compute_bundles", "materialize_friends", "merge_on_insert",
           "min_labels", "read_bundles", "read_members", "size_histogram", "write_bundles",
           "write_members"]
