"""Catalog and run metadata: data model, CSV/JSON ingestion, validation.

Also home of the pluggable classification-distance strategies.
"""

from __future__ import annotations

import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from .geometry import Region, SkyPosition, buffer, radec_to_xyz

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["runID", "objectID"]
CORE_COLUMNS = ["runID", "objectID", "ra_deg", "dec_deg", "posErr_arcsec"]
MAX_OBJECT_ID = 2**63 - 1


class CatalogError(ValueError):
    """Raised for malformed or inconsistent catalog input."""


@dataclass(frozen=True)
class CatalogObject:
    run_id: str
    object_id: int
    position: SkyPosition
    position_error: float
    attributes: tuple[tuple[str, object], ...] = ()


@dataclass(frozen=True)
class RunMetadata:
    run_id: str
    footprint: Region
    masks: Region = field(default_factory=Region.empty)
    default_position_error: float = 0.1
    epoch: float | None = None

    def __post_init__(self):
        if not self.footprint.convexes:
            raise CatalogError(f"run {self.run_id!r}: footprint is empty")
        if not self.default_position_error > 0:
            raise CatalogError(f"run {self.run_id!r}: defaultPosErr_arcsec must be > 0")

    def to_json(self) -> dict:
        return {
            "runID": self.run_id,
            "footprint": self.footprint.to_json(),
            "masks": self.masks.to_json(),
            "defaultPosErr_arcsec": self.default_position_error,
            "epoch_mjd": self.epoch,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "RunMetadata":
        try:
            run_id = str(data["runID"])
            footprint = Region.from_json(data["footprint"])
        except KeyError as exc:
            raise CatalogError(f"run metadata missing key {exc}") from None
        masks = Region.from_json(data["masks"]) if data.get("masks") else Region.empty()
        epoch = data.get("epoch_mjd")
        return cls(
            run_id=run_id,
            footprint=footprint,
            masks=masks,
            default_position_error=float(data.get("defaultPosErr_arcsec", 0.1)),
            epoch=None if epoch is None else float(epoch),
        )


def read_runs(path) -> list[RunMetadata]:
    """Read run metadata from a JSON file holding one run object or a list."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, Mapping):
        data = data.get("runs", [data])
    return [RunMetadata.from_json(d) for d in data]


def write_runs(runs: Iterable[RunMetadata], path) -> None:
    payload = [r.to_json() for r in sorted(runs, key=lambda r: r.run_id)]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, default=_json_float)
        fh.write("\n")


def _json_float(value):
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    raise TypeError(f"not JSON serializable: {value!r}")


# -- classification distance ----


@dataclass(frozen=True)
class FixedDistance:
    """Constant threshold in arcseconds, whatever the position errors."""

    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("fixed classification distance must be > 0")

    def __call__(self, e1, e2):
        e1 = np.asarray(e1, dtype=np.float64)
        e2 = np.asarray(e2, dtype=np.float64)
        return np.full(np.broadcast(e1, e2).shape, self.distance)[()]

    def upper_bound(self, max_error: float) -> float:
        return self.distance

    def __str__(self):
        return f"fixed:{self.distance!r}"


@dataclass(frozen=True)
class ScaledDistance:
    """``factor`` times the larger of the two position errors."""

    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError("scaled classification factor must be > 0")

    def __call__(self, e1, e2):
        return self.factor * np.maximum(np.asarray(e1, dtype=np.float64),
                                        np.asarray(e2, dtype=np.float64))[()]

    def upper_bound(self, max_error: float) -> float:
        return self.factor * max_error

    def __str__(self):
        return f"scaled:{self.factor!r}"


DistanceFn = FixedDistance | ScaledDistance


def parse_distance(spec) -> DistanceFn:
    """Parse ``fixed:<arcsec>`` or ``scaled:<k>``; distance objects pass through."""
    if isinstance(spec, (FixedDistance, ScaledDistance)):
        return spec
    if callable(spec):
        return spec
    name, _, value = str(spec).partition(":")
    try:
        number = float(value)
    except ValueError:
        raise ValueError(f"bad classification distance {spec!r}") from None
    if name == "fixed":
        return FixedDistance(number)
    if name == "scaled":
        return ScaledDistance(number)
    raise ValueError(f"unknown classification distance strategy {name!r}")


def classification_distance(fn, e1, e2):
    """Evaluate ``fn`` on position errors (arcsec); both must be positive."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if np.any(~(e1 > 0)) or np.any(~(e2 > 0)):
        raise ValueError("position errors must be > 0")
    out = parse_distance(fn)(e1, e2)
    return float(out) if np.ndim(out) == 0 else out


# -- the catalog table ----


class Catalog:
    """Immutable table of detections, indexed by (runID, objectID).

    The underlying frame has the canonical columns ``runID, objectID,
    ra_deg, dec_deg, posErr_arcsec`` followed by pass-through attribute
    columns, and is kept sorted by key.
    """

    def __init__(self, frame: pd.DataFrame, *, validate: bool = True):
        frame = frame.reset_index(drop=True)
        if validate:
            _validate_frame(frame)
        frame = frame.sort_values(KEY_COLUMNS, kind="mergesort").reset_index(drop=True)
        self._frame = frame
        self._xyz = radec_to_xyz(frame["ra_deg"].to_numpy(), frame["dec_deg"].to_numpy())
        self._xyz.flags.writeable = False

    @classmethod
    def empty(cls, attributes: Iterable[str] = ()) -> "Catalog":
        cols = CORE_COLUMNS + list(attributes)
        frame = pd.DataFrame({c: pd.Series(dtype=_dtype_for(c)) for c in cols})
        return cls(frame, validate=False)

    @classmethod
    def from_arrays(cls, run_id, object_id, ra_deg, dec_deg, pos_err,
                    attributes: Mapping[str, Iterable] | None = None) -> "Catalog":
        n = len(object_id)
        frame = pd.DataFrame({
            "runID": np.broadcast_to(np.asarray(run_id, dtype=object), (n,)).astype(str),
            "objectID": np.asarray(object_id, dtype=np.int64),
            "ra_deg": np.asarray(ra_deg, dtype=np.float64),
            "dec_deg": np.asarray(dec_deg, dtype=np.float64),
            "posErr_arcsec": np.broadcast_to(np.asarray(pos_err, dtype=np.float64), (n,)),
        })
        for name, values in (attributes or {}).items():
            frame[name] = list(values)
        return cls(frame)

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    @property
    def xyz(self) -> np.ndarray:
        return self._xyz

    @property
    def run_ids(self) -> np.ndarray:
        return self._frame["runID"].to_numpy()

    @property
    def object_ids(self) -> np.ndarray:
        return self._frame["objectID"].to_numpy()

    @property
    def pos_err(self) -> np.ndarray:
        return self._frame["posErr_arcsec"].to_numpy()

    @property
    def attribute_names(self) -> list[str]:
        return [c for c in self._frame.columns if c not in CORE_COLUMNS]

    @property
    def runs(self) -> list[str]:
        return sorted(pd.unique(self._frame["runID"]))

    def __len__(self) -> int:
        return len(self._frame)

    def __iter__(self) -> Iterator[CatalogObject]:
        attrs = self.attribute_names
        for i, row in enumerate(self._frame.itertuples(index=False)):
            yield CatalogObject(
                run_id=row[0],
                object_id=int(row[1]),
                position=SkyPosition(*self._xyz[i]),
                position_error=float(row[4]),
                attributes=tuple(zip(attrs, row[5:])),
            )

    def locate(self, run_id, object_id) -> np.ndarray:
        """Row positions of (run_id, object_id) keys; -1 where absent."""
        keys = pd.MultiIndex.from_arrays([self._frame["runID"], self._frame["objectID"]])
        query = pd.MultiIndex.from_arrays([np.asarray(run_id, dtype=object),
                                           np.asarray(object_id, dtype=np.int64)])
        return keys.get_indexer(query)

    def select_runs(self, run_ids: Iterable[str]) -> "Catalog":
        mask = self._frame["runID"].isin(list(run_ids)).to_numpy()
        return Catalog(self._frame[mask], validate=False)

    def concat(self, other: "Catalog") -> "Catalog":
        return Catalog(pd.concat([self._frame, other.frame], ignore_index=True))

    def to_csv(self, path_or_buf=None):
        """Write the canonical CSV (sorted by key, shortest round-trip floats)."""
        return self._frame.to_csv(path_or_buf, index=False, lineterminator="\n")


def _dtype_for(column: str):
    return {"runID": object, "objectID": np.int64, "ra_deg": np.float64,
            "dec_deg": np.float64, "posErr_arcsec": np.float64}.get(column, object)


def _validate_frame(frame: pd.DataFrame) -> None:
    missing = [c for c in CORE_COLUMNS if c not in frame.columns]
    if missing:
        raise CatalogError(f"catalog missing columns {missing}")
    if not len(frame):
        return
    dup = frame.duplicated(KEY_COLUMNS)
    if dup.any():
        row = frame[dup].iloc[0]
        raise CatalogError(f"duplicate key (runID={row['runID']!r}, objectID={row['objectID']})")
    ids = frame["objectID"].to_numpy()
    if np.any(ids <= 0):
        raise CatalogError("objectID must be positive (0 is the miss sentinel)")
    dec = frame["dec_deg"].to_numpy()
    if np.any(~((dec >= -90.0) & (dec <= 90.0))):
        raise CatalogError("dec_deg outside [-90, 90]")
    ra = frame["ra_deg"].to_numpy()
    if np.any(~((ra >= 0.0) & (ra < 360.0))):
        raise CatalogError("ra_deg outside [0, 360)")
    if np.any(~(frame["posErr_arcsec"].to_numpy() > 0)):
        raise CatalogError("posErr_arcsec must be > 0")


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


def load_catalog(source, runs: Iterable[RunMetadata] | None = None) -> Catalog:
    """Parse a catalog CSV stream into a :class:`Catalog`.

    Parameters
    ----------
    source : path, file object or str
        CSV with header ``runID,objectID,ra_deg,dec_deg,posErr_arcsec[,attr...]``.
        A ``str`` containing a newline is parsed as CSV text.
    runs : iterable of RunMetadata, optional
        Supplies ``defaultPosErr_arcsec`` for rows with an empty error column.

    Raises
    ------
    CatalogError
        On a malformed row (the message carries the 1-based file line
        number), a duplicated key, or out-of-range coordinates.
    """
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        raw = pd.read_csv(source, dtype=str, keep_default_na=False, na_filter=False,
                          encoding="utf-8")
    except pd.errors.EmptyDataError:
        return Catalog.empty()
    except pd.errors.ParserError as exc:
        raise CatalogError(f"malformed catalog: {exc}") from None

    if list(raw.columns[:5]) != CORE_COLUMNS:
        raise CatalogError(f"bad catalog header {list(raw.columns)}; expected {CORE_COLUMNS}[,attr...]")
    if not len(raw):
        return Catalog.empty(raw.columns[5:])

    line = np.arange(len(raw)) + 2
    runs_by_id = {r.run_id: r for r in runs or ()}

    run_id = raw["runID"].to_numpy(dtype=object)
    if np.any(run_id == ""):
        raise CatalogError(f"line {line[_first_bad(run_id == '')]}: empty runID")

    ids = pd.to_numeric(raw["objectID"], errors="coerce")
    bad = ids.isna().to_numpy() | ~raw["objectID"].str.fullmatch(r"\+?\d+").to_numpy()
    if bad.any():
        i = _first_bad(bad)
        raise CatalogError(f"line {line[i]}: bad objectID {raw['objectID'].iloc[i]!r}")
    if np.any(ids.to_numpy(dtype=np.float64) > MAX_OBJECT_ID):
        i = _first_bad(ids.to_numpy(dtype=np.float64) > MAX_OBJECT_ID)
        raise CatalogError(f"line {line[i]}: objectID exceeds 64 bits")
    object_id = raw["objectID"].astype(np.int64).to_numpy()
    if np.any(object_id <= 0):
        i = _first_bad(object_id <= 0)
        raise CatalogError(f"line {line[i]}: objectID must be > 0")

    def numeric(col):
        values = pd.to_numeric(raw[col], errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            i = _first_bad(bad)
            raise CatalogError(f"line {line[i]}: bad {col} {raw[col].iloc[i]!r}")
        return values

    ra = numeric("ra_deg")
    dec = numeric("dec_deg")
    if np.any((dec < -90.0) | (dec > 90.0)):
        i = _first_bad((dec < -90.0) | (dec > 90.0))
        raise CatalogError(f"line {line[i]}: dec_deg {dec[i]} outside [-90, 90]")
    if np.any((ra < 0.0) | (ra >= 360.0)):
        i = _first_bad((ra < 0.0) | (ra >= 360.0))
        raise CatalogError(f"line {line[i]}: ra_deg {ra[i]} outside [0, 360)")

    err_text = raw["posErr_arcsec"]
    blank = (err_text == "").to_numpy()
    err = pd.to_numeric(err_text.where(~blank, "nan"), errors="coerce").to_numpy(dtype=np.float64)
    if blank.any():
        for i in np.flatnonzero(blank):
            meta = runs_by_id.get(run_id[i])
            if meta is None:
                raise CatalogError(f"line {line[i]}: empty posErr_arcsec and no run default "
                                   f"for run {run_id[i]!r}")
            err[i] = meta.default_position_error
    bad = ~(err > 0) | ~np.isfinite(err)
    if bad.any():
        i = _first_bad(bad)
        raise CatalogError(f"line {line[i]}: posErr_arcsec must be > 0, got {err_text.iloc[i]!r}")

    frame = pd.DataFrame({
        "runID": run_id.astype(str),
        "objectID": object_id,
        "ra_deg": ra,
        "dec_deg": dec,
        "posErr_arcsec": err,
    })
    for col in raw.columns[5:]:
        frame[col] = raw[col].to_numpy()

    dup = frame.duplicated(KEY_COLUMNS)
    if dup.any():
        i = _first_bad(dup.to_numpy())
        raise CatalogError(f"line {line[i]}: duplicate key (runID={run_id[i]!r}, "
                           f"objectID={object_id[i]})")
    catalog = Catalog(frame, validate=False)
    logger.info("loaded %d catalog objects", len(catalog))
    return catalog


def load_catalogs(paths: Iterable, runs: Iterable[RunMetadata] | None = None) -> Catalog:
    """Load and concatenate several catalog files, rejecting keys duplicated across files."""
    runs = list(runs or ())
    frames = [load_catalog(os.fspath(p), runs).frame for p in paths]
    if not frames:
        return Catalog.empty()
    frame = pd.concat(frames, ignore_index=True)
    dup = frame.duplicated(KEY_COLUMNS)
    if dup.any():
        row = frame[dup].iloc[0]
        raise CatalogError(f"duplicate key (runID={row['runID']!r}, objectID={row['objectID']}) "
                           "across catalog files")
    return Catalog(frame, validate=False)


def footprint_warnings(catalog: Catalog, runs: Iterable[RunMetadata],
                       slack_arcsec: float = 1.0) -> list[str]:
    """List objects lying outside ``buffer(footprint, slack)`` of their run,
    or belonging to a run with no metadata."""
    warnings = []
    by_id = {r.run_id: r for r in runs}
    run_ids = catalog.run_ids
    for run in catalog.runs:
        rows = np.flatnonzero(run_ids == run)
        meta = by_id.get(run)
        if meta is None:
            warnings.append(f"run {run!r}: no run metadata")
            continue
        region = buffer(meta.footprint, slack_arcsec)
        outside = rows[~region.contains(catalog.xyz[rows])]
        for i in outside:
            warnings.append(f"run {run!r} object {int(catalog.object_ids[i])} lies outside "
                            f"its footprint (+{slack_arcsec}\")")
    for w in warnings[:20]:
        logger.warning(w)
    return warnings


def max_position_error(catalog: Catalog) -> float:
    return float(catalog.pos_err.max()) if len(catalog) else 0.0


def pair_distance(fn, a: RunMetadata, b: RunMetadata) -> float:
    """Run-pair classification distance from the runs' default position errors."""
    return float(classification_distance(fn, a.default_position_error, b.default_position_error))


__all__ = [
    "Catalog", "CatalogError", "CatalogObject", "DistanceFn", "FixedDistance", "RunMetadata",
    "ScaledDistance", "classification_distance", "footprint_warnings", "load_catalog",
    "load_catalogs", "max_position_error", "pair_distance", "parse_distance", "read_runs",
    "write_runs",
]
