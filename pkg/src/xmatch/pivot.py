"""Pivoted cross-match: one column per run, one row per member combination.

Built exactly like a chain of left outer joins from the bundle table onto
the distinct (bundleID, objectID1, run1) records of the Match table, with
0 standing in for a run that has no member in the bundle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .catalog import Catalog
from .geometry import radec_to_xyz, separation_rad


@dataclass(frozen=True)
class PivotRow:
    bundle_id: int
    cells: dict
    is_primary: bool


def column_name(run_id: str) -> str:
    return f"{run_id}_objID"


def pivot(bundles: pd.DataFrame, matches: pd.DataFrame, catalog: Catalog,
          runs: Sequence[str], known_runs: Iterable[str] | None = None) -> pd.DataFrame:
    """Flatten bundles into rows of per-run object IDs.

    A bundle with a, b, c members in three requested runs expands into
    ``max(1, a) * max(1, b) * max(1, c)`` rows. Bundles without any member
    in the requested runs produce no row. Exactly one row per bundle has
    ``isPrimary`` set: the one holding, for each run, the member nearest the
    bundle's mean position (ties go to the smaller objectID).

    Raises
    ------
    ValueError
        For an empty run list, a repeated run, or a run absent from
        ``known_runs`` (defaults to the catalog's runs).
    """
    runs = [str(r) for r in runs]
    if not runs:
        raise ValueError("pivot needs at least one run")
    if len(set(runs)) != len(runs):
        raise ValueError("pivot run list has duplicates")
    known = set(catalog.runs if known_runs is None else known_runs)
    unknown = [r for r in runs if r not in known]
    if unknown:
        raise ValueError(f"unknown runs for pivot: {unknown}")

    cols = [column_name(r) for r in runs]
    bm = matches[["bundleID", "objectID1", "run1"]].drop_duplicates()
    bm = bm[bm["run1"].isin(runs)]

    # nearest-to-mean member per (bundle, run)
    pos = catalog.locate(bm["run1"], bm["objectID1"])
    if np.any(pos < 0):
        raise KeyError("match record references an object missing from the catalog")
    centers = bundles.set_index("bundleID").loc[bm["bundleID"], ["raAvg_deg", "decAvg_deg"]]
    center_xyz = radec_to_xyz(centers["raAvg_deg"].to_numpy(), centers["decAvg_deg"].to_numpy())
    bm = bm.assign(_sep=separation_rad(catalog.xyz[pos], center_xyz))
    primary = (bm.sort_values(["bundleID", "run1", "_sep", "objectID1"], kind="mergesort")
                 .drop_duplicates(["bundleID", "run1"]))

    present = np.unique(bm["bundleID"].to_numpy())
    table = pd.DataFrame({"bundleID": present.astype(np.int64)})
    best = pd.DataFrame({"bundleID": present.astype(np.int64)})
    for run, col in zip(runs, cols):
        sub = bm[bm["run1"] == run][["bundleID", "objectID1"]].rename(columns={"objectID1": col})
        table = table.merge(sub, on="bundleID", how="left", sort=False)
        table[col] = table[col].fillna(0).astype(np.int64)
        top = primary[primary["run1"] == run][["bundleID", "objectID1"]]
        best = best.merge(top.rename(columns={"objectID1": col}), on="bundleID", how="left")
        best[col] = best[col].fillna(0).astype(np.int64)

    ref = best.set_index("bundleID").loc[table["bundleID"], cols].to_numpy()
    table["isPrimary"] = np.all(table[cols].to_numpy() == ref, axis=1)
    table = table.sort_values(["bundleID", *cols], kind="mergesort").reset_index(drop=True)
    return table[["bundleID", *cols, "isPrimary"]]


def pivot_rows(table: pd.DataFrame) -> list[PivotRow]:
    cols = [c for c in table.columns if c.endswith("_objID")]
    return [PivotRow(int(r["bundleID"]), {c[:-len("_objID")]: int(r[c]) for c in cols},
                     bool(r["isPrimary"])) for _, r in table.iterrows()]


def write_pivot(table: pd.DataFrame, path_or_buf=None):
    out = table.copy()
    out["isPrimary"] = out["isPrimary"].astype(np.int64)
    return out.to_csv(path_or_buf, index=False, lineterminator="\n")


def read_pivot(path_or_buf) -> pd.DataFrame:
    table = pd.read_csv(path_or_buf)
    table["isPrimary"] = table["isPrimary"].astype(bool)
    return table


__all__ = ["PivotRow", "column_name", "pivot", "pivot_rows", "read_pivot", "write_pivot"]
