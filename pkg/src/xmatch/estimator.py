"""Estimator-style front end tying the pipeline stages together."""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .catalog import Catalog, footprint_warnings
from .fof import (
    assign_bundle_ids,
    bundle_statistics,
    compute_bundles,
    materialize_friends,
    merge_on_insert,
    size_histogram,
)
from .match import Verdict, compute_hits, empty_matches, search_radius, sort_matches
from .missclass import classify_misses, compute_misses, compute_overlaps, verdict_counts
from .pivot import pivot
from .validation import check_catalog, check_distance, check_runs, check_zone_height

class CrossMatch(ClusterMixin, TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Cross-match detections from overlapping runs into bundles.

    ``fit`` runs the whole pipeline: hits, overlaps, misses and their
    verdicts, friends-of-friends bundles and bundle statistics.
    ``fit_predict`` returns the bundleID of every catalog row (0 for objects
    that no match record references), ``transform`` returns the pivoted
    cross-match, and ``partial_fit`` folds in catalogs of new runs.

    Parameters
    ----------
    distance : str or distance strategy, default="fixed:1.0"
        Classification distance, ``fixed:<arcsec>`` or ``scaled:<k>``.
    zone_height : float, optional
        Zone index stripe height in arcsec.
    pivot_runs : list of str, optional
        Run order for :meth:`transform`; defaults to all runs, sorted.
    check_footprints : bool, default=True
        Collect objects lying outside their run footprint into ``warnings_``.

    Attributes
    ----------
    catalog_ : Catalog
    runs_ : list of RunMetadata
    overlaps_ : list of OverlapRecord
    hits_ : DataFrame
    misses_ : DataFrame
    matches_ : DataFrame
        Hit, miss verdict and Friend records with bundleIDs, canonical order.
    members_ : DataFrame
        ``runID, objectID, bundleID`` of every referenced object.
    bundles_ : DataFrame
        Bundle statistics, one row per bundle.
    labels_ : ndarray of int64
        bundleID per catalog row.
    """

    def __init__(self, distance="fixed:1.0", zone_height=None, pivot_runs=None,
                 check_footprints=True):
        self.distance = distance
        self.zone_height = zone_height
        self.pivot_runs = pivot_runs
        self.check_footprints = check_footprints

    def _zone_height(self, catalog: Catalog):
        fn = check_distance(self.distance)
        radius = search_radius(fn, catalog)
        return check_zone_height(self.zone_height, radius)

    def fit(self, X, y=None, runs=None):
        runs = check_runs(runs)
        catalog = check_catalog(X, runs)
        fn = check_distance(self.distance)
        self.catalog_ = catalog
        self.runs_ = sorted(runs, key=lambda r: r.run_id)
        self.warnings_ = (footprint_warnings(catalog, self.runs_)
                          if self.check_footprints and self.runs_ else [])
        self.hits_ = compute_hits(catalog, fn, self._zone_height(catalog))
        self.overlaps_ = compute_overlaps(self.runs_, fn) if len(self.runs_) >= 2 else []
        self.misses_ = compute_misses(catalog, self.hits_, self.overlaps_)
        verdicts = classify_misses(self.misses_, self.overlaps_)
        self._finish(pd.concat([self.hits_, verdicts], ignore_index=True), members=None)
        return self

    def _finish(self, base: pd.DataFrame, members: pd.DataFrame | None):
        """Bundle, add friends, and compute statistics from Hit + miss records."""
        if members is None:
            members, base = compute_bundles(base)
        else:
            base = assign_bundle_ids(base, members)
        friends = materialize_friends(base, members, self.catalog_)
        self.members_ = members
        self.matches_ = sort_matches(pd.concat([base, friends], ignore_index=True)
                                     if len(friends) else base)
        self.bundles_ = bundle_statistics(members, self.matches_, self.catalog_)
        pos = self.catalog_.locate(members["runID"], members["objectID"])
        labels = np.zeros(len(self.catalog_), dtype=np.int64)
        labels[pos[pos >= 0]] = members["bundleID"].to_numpy()[pos >= 0]
        self.labels_ = labels

    def fit_predict(self, X, y=None, runs=None):
        return self.fit(X, runs=runs).labels_

    def partial_fit(self, X, y=None, runs=None):
        """Insert the catalogs of one or more new runs.

        The first call on an unfitted estimator is a plain :meth:`fit`.
        Subsequent calls compute only the records involving the new runs
        and merge them into the existing bundle partition.
        """
        if not hasattr(self, "catalog_"):
            return self.fit(X, runs=runs)
        new_runs = check_runs(runs)
        new_catalog = check_catalog(X, self.runs_ + new_runs)
        added = set(new_catalog.runs) | {r.run_id for r in new_runs}
        clash = added & (set(self.catalog_.runs) | {r.run_id for r in self.runs_})
        if clash:
            raise ValueError(f"runs already inserted: {sorted(clash)}")
        fn = check_distance(self.distance)

        catalog = self.catalog_.concat(new_catalog)
        all_runs = sorted(self.runs_ + new_runs, key=lambda r: r.run_id)
        fresh = np.isin(catalog.run_ids, list(added))

        new_hits = _hits_touching(catalog, fn, self.zone_height, fresh)
        hits = sort_matches(pd.concat([self.hits_, new_hits], ignore_index=True))
        overlaps = compute_overlaps(all_runs, fn) if len(all_runs) >= 2 else []
        new_overlaps = [o for o in overlaps if o.run1 in added or o.run2 in added]
        new_misses = compute_misses(catalog, hits, new_overlaps)
        new_verdicts = classify_misses(new_misses, new_overlaps)

        old_base = self.matches_[self.matches_["hitOrMiss"] != Verdict.FRIEND.value]
        members = merge_on_insert(self.members_, pd.concat([new_hits, new_verdicts],
                                                           ignore_index=True))
        self.catalog_ = catalog
        self.runs_ = all_runs
        if self.check_footprints and new_runs:
            self.warnings_ = self.warnings_ + footprint_warnings(new_catalog, new_runs)
        self.hits_ = hits
        self.overlaps_ = overlaps
        self.misses_ = (pd.concat([self.misses_, new_misses], ignore_index=True)
                          .sort_values(["run1", "objectID", "run2"], kind="mergesort")
                          .reset_index(drop=True))
        self._finish(pd.concat([old_base, new_hits, new_verdicts], ignore_index=True), members)
        return self

    def transform(self, X=None):
        """Pivoted cross-match table for ``pivot_runs`` (all runs by default)."""
        check_is_fitted(self, "bundles_")
        runs = list(self.pivot_runs) if self.pivot_runs else self.catalog_.runs
        known = {r.run_id for r in self.runs_} | set(self.catalog_.runs)
        return pivot(self.bundles_, self.matches_, self.catalog_, runs, known)

    def summary(self) -> dict:
        """Counts per verdict and the bundle size histogram."""
        check_is_fitted(self, "bundles_")
        counts = verdict_counts(self.matches_)
        pairs = sum(counts[v] for v in ("Hit", "Ephemeral", "Masked", "Edge"))
        return {
            "objects": int(len(self.catalog_)),
            "runs": len(self.catalog_.runs),
            "overlaps": len(self.overlaps_),
            "records": int(len(self.matches_)),
            "verdicts": counts,
            "verdict_fractions": {k: (counts[k] / pairs if pairs else 0.0)
                                  for k in ("Hit", "Ephemeral", "Masked", "Edge")},
            "bundles": int(len(self.bundles_)),
            "bundle_sizes": {str(k): v for k, v in size_histogram(self.members_).items()},
        }


def _hits_touching(catalog: Catalog, fn, zone_height, fresh: np.ndarray) -> pd.DataFrame:
    """Hit records with at least one endpoint among the ``fresh`` rows."""
    if not fresh.any() or len(catalog.runs) < 2:
        return empty_matches()
    hits = compute_hits(catalog, fn, zone_height)
    a = catalog.locate(hits["run1"], hits["objectID1"])
    b = catalog.locate(hits["run2"], hits["objectID2"])
    return hits[fresh[a] | fresh[b]].reset_index(drop=True)


__all__ = ["CrossMatch"]
