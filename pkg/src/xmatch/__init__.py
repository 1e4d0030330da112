"""Cross-matching of multi-run sky catalogs into bundles of detections."""

from .catalog import (
    Catalog,
    CatalogError,
    FixedDistance,
    RunMetadata,
    ScaledDistance,
    load_catalog,
    load_catalogs,
    parse_distance,
    read_runs,
    write_runs,
)
from .estimator import CrossMatch
from .fof import bundle_statistics, compute_bundles, materialize_friends, merge_on_insert
from .geometry import Convex, HalfSpace, Region, SkyPosition, angular_distance
from .match import Verdict, compute_hits
from .missclass import ConsistencyError, classify_misses, compute_misses, compute_overlaps
from .pivot import pivot
from .skygen import Scenario, default_scenario, generate
from .zones import build_index, neighbors_within

__version__ = "0.1.0"

__all__ = [
    "Catalog", "CatalogError", "ConsistencyError", "Convex", "CrossMatch", "FixedDistance",
    "HalfSpace", "Region", "RunMetadata", "ScaledDistance", "Scenario", "SkyPosition", "Verdict",
    "angular_distance", "build_index", "bundle_statistics", "classify_misses", "compute_bundles",
    "compute_hits", "compute_misses", "compute_overlaps", "default_scenario", "generate",
    "load_catalog", "load_catalogs", "materialize_friends", "merge_on_insert",
    "neighbors_within", "parse_distance", "pivot", "read_runs", "write_runs",
]
