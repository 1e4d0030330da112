"""Input coercion for the estimator API."""

from __future__ import annotations

import os
from typing import Iterable, Mapping

import pandas as pd

from .catalog import Catalog, RunMetadata, load_catalog, parse_distance, read_runs


def check_catalog(X, runs: Iterable[RunMetadata] | None = None) -> Catalog:
    """Accept a Catalog, a DataFrame in catalog layout, or a CSV path."""
    if isinstance(X, Catalog):
        return X
    if isinstance(X, pd.DataFrame):
        return Catalog(X)
    if isinstance(X, (str, os.PathLike)):
        return load_catalog(os.fspath(X), runs)
    raise TypeError(f"expected a Catalog, DataFrame or path, got {type(X).__name__}")


def check_runs(runs) -> list[RunMetadata]:
    """Accept RunMetadata objects, run JSON dicts, or paths to run JSON files."""
    if runs is None:
        return []
    if isinstance(runs, (RunMetadata, Mapping, str, os.PathLike)):
        runs = [runs]
    out: list[RunMetadata] = []
    for r in runs:
        if isinstance(r, RunMetadata):
            out.append(r)
        elif isinstance(r, Mapping):
            out.append(RunMetadata.from_json(r))
        elif isinstance(r, (str, os.PathLike)):
            out.extend(read_runs(r))
        else:
            raise TypeError(f"cannot interpret {type(r).__name__} as run metadata")
    ids = [r.run_id for r in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate runID in run metadata")
    return out


def check_distance(distance):
    return parse_distance(distance)


def check_zone_height(zone_height, radius: float):
    if zone_height is None:
        return None
    zone_height = float(zone_height)
    if not zone_height > 0:
        raise ValueError(f"zone_height must be > 0, got {zone_height}")
    if zone_height < radius:
        raise ValueError(f"zone_height {zone_height}\" is below the largest classification "
                         f"distance {radius}\"")
    return zone_height
