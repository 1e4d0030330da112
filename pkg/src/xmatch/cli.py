"""Command-line pipeline driver.

Each stage reads the artifacts of the previous one from ``--out`` and
writes its own there, in canonical sorted form, so re-running a stage on
unchanged inputs reproduces the same bytes.

    gen       catalog.csv runs.json labels.csv scenario.json
    ingest    objects.csv runs.json warnings.json
    hits      hits.csv
    misses    overlaps.json misses.csv
    classify  match_classified.csv
    fof       match.csv members.csv
    bundles   bundles.csv
    pivot     pivot.csv

Every stage also prints a JSON summary and stores it as ``summary.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd

from .catalog import (
    Catalog,
    CatalogError,
    RunMetadata,
    footprint_warnings,
    load_catalog,
    load_catalogs,
    parse_distance,
    read_runs,
    write_runs,
)
from .fof import (
    bundle_statistics,
    compute_bundles,
    materialize_friends,
    read_bundles,
    read_members,
    size_histogram,
    write_bundles,
    write_members,
)
from .match import Verdict, compute_hits, read_matches, sort_matches, write_matches
from .missclass import (
    classify_misses,
    compute_misses,
    compute_overlaps,
    read_misses,
    read_overlaps,
    verdict_counts,
    write_misses,
    write_overlaps,
)
from .oracles import bfs_components, brute_force_hits, friend_fixed_point, partition_of
from .pivot import pivot, write_pivot
from .skygen import Scenario, default_scenario, generate

logger = logging.getLogger("xmatch")

STAGES = ("gen", "ingest", "hits", "misses", "classify", "fof", "bundles", "pivot")
PIPELINE = STAGES[1:]

# stage -> (artifacts it needs, stage that produces them)
REQUIRES = {
    "hits": (("objects.csv", "runs.json"), "ingest"),
    "misses": (("objects.csv", "runs.json", "hits.csv"), "hits"),
    "classify": (("misses.csv", "overlaps.json", "hits.csv"), "misses"),
    "fof": (("match_classified.csv", "objects.csv"), "classify"),
    "bundles": (("match.csv", "members.csv", "objects.csv"), "fof"),
    "pivot": (("bundles.csv", "match.csv", "objects.csv"), "bundles"),
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PREREQ = 0, 1, 2, 3


class ConfigError(Exception):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")


class PrerequisiteError(Exception):
    pass


@dataclass
class PipelineConfig:
    catalogs: list[Path] = field(default_factory=list)
    runs: list[Path] = field(default_factory=list)
    distance: str = "fixed:1.0"
    zone_height: float | None = None
    pivot_runs: list[str] | None = None
    scenario: Scenario | None = None
    out: Path = Path("xmatch_out")

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        """Parse a JSON config; relative paths resolve against the config file."""
        if path is None:
            return cls()
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(path, exc.strerror or str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(path, f"invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(path, "top level must be an object")
        unknown = set(data) - {"catalogs", "runs", "distance", "zone_height", "pivot_runs",
                               "scenario", "out"}
        if unknown:
            raise ConfigError(path, f"unknown keys {sorted(unknown)}")
        base = path.parent
        cfg = cls()
        try:
            cfg.catalogs = [base / p for p in _str_list(data.get("catalogs", []), "catalogs")]
            cfg.runs = [base / p for p in _str_list(data.get("runs", []), "runs")]
            if "distance" in data:
                cfg.distance = str(parse_distance(data["distance"]))
            if data.get("zone_height") is not None:
                cfg.zone_height = float(data["zone_height"])
            if data.get("pivot_runs") is not None:
                cfg.pivot_runs = _str_list(data["pivot_runs"], "pivot_runs")
            if data.get("scenario") is not None:
                cfg.scenario = Scenario.from_json(data["scenario"])
            if data.get("out") is not None:
                cfg.out = base / data["out"]
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(path, str(exc)) from None
        for p in cfg.catalogs + cfg.runs:
            if not p.is_file():
                raise ConfigError(path, f"referenced file {p} does not exist")
        # referenced files must parse before any stage runs
        try:
            for p in cfg.runs:
                read_runs(p)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(path, f"bad run metadata: {exc}") from None
        return cfg


def _str_list(value, key):
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise TypeError(f"'{key}' must be a list of strings")
    return list(value)


class Pipeline:
    """Stage runner over one output directory."""

    def __init__(self, config: PipelineConfig, out: Path, seed: int | None = None):
        self.config = config
        self.out = Path(out)
        self.seed = seed
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, stage: str):
        names, producer = REQUIRES[stage]
        missing = [n for n in names if not self.path(n).is_file()]
        if missing:
            raise PrerequisiteError(f"stage '{stage}' needs {', '.join(missing)} in {self.out}; "
                                    f"run stage '{producer}' first")

    def runs(self) -> list[RunMetadata]:
        return read_runs(self.path("runs.json"))

    def catalog(self) -> Catalog:
        return load_catalog(self.path("objects.csv"), self.runs())

    # -- stages --

    def gen(self):
        scenario = self.config.scenario or default_scenario()
        if self.seed is not None:
            scenario = replace(scenario, seed=self.seed)
        result = generate(scenario)
        result.write(self.out)
        self.summary["expected_verdicts"] = result.label_counts()

    def ingest(self):
        if self.config.catalogs:
            runs = [r for p in self.config.runs for r in read_runs(p)]
            catalog = load_catalogs(self.config.catalogs, runs)
        elif self.path("catalog.csv").is_file() and self.path("runs.json").is_file():
            runs = read_runs(self.path("runs.json"))
            catalog = load_catalog(self.path("catalog.csv"), runs)
        else:
            raise PrerequisiteError("stage 'ingest' needs catalogs in the config or "
                                    f"catalog.csv and runs.json in {self.out}; run stage 'gen' first")
        warnings = footprint_warnings(catalog, runs) if runs else []
        catalog.to_csv(self.path("objects.csv"))
        write_runs(sorted(runs, key=lambda r: r.run_id), self.path("runs.json"))
        _write_json(self.path("warnings.json"), warnings)
        self.summary.update(objects=len(catalog), runs=len(catalog.runs), warnings=len(warnings))

    def hits(self):
        self.need("hits")
        hits = compute_hits(self.catalog(), self.config.distance, self.config.zone_height)
        write_matches(hits, self.path("hits.csv"))
        self.summary["hits"] = len(hits)

    def misses(self):
        self.need("misses")
        runs = self.runs()
        overlaps = compute_overlaps(runs, self.config.distance) if len(runs) >= 2 else []
        misses = compute_misses(self.catalog(), read_matches(self.path("hits.csv")), overlaps)
        write_overlaps(overlaps, self.path("overlaps.json"))
        write_misses(misses, self.path("misses.csv"))
        self.summary.update(overlaps=len(overlaps), misses=len(misses))

    def classify(self):
        self.need("classify")
        verdicts = classify_misses(read_misses(self.path("misses.csv")),
                                   read_overlaps(self.path("overlaps.json")))
        hits = read_matches(self.path("hits.csv"))
        write_matches(pd.concat([hits, verdicts], ignore_index=True),
                      self.path("match_classified.csv"))

    def fof(self):
        self.need("fof")
        members, base = compute_bundles(read_matches(self.path("match_classified.csv")))
        friends = materialize_friends(base, members, self.catalog())
        matches = sort_matches(pd.concat([base, friends], ignore_index=True))
        write_matches(matches, self.path("match.csv"))
        write_members(members, self.path("members.csv"))

    def bundles(self):
        self.need("bundles")
        stats = bundle_statistics(read_members(self.path("members.csv")),
                                  read_matches(self.path("match.csv")), self.catalog())
        write_bundles(stats, self.path("bundles.csv"))

    def pivot(self):
        self.need("pivot")
        catalog = self.catalog()
        runs = self.config.pivot_runs or catalog.runs
        if not runs:
            pd.DataFrame(columns=["bundleID", "isPrimary"]).to_csv(
                self.path("pivot.csv"), index=False, lineterminator="\n")
            return
        known = set(catalog.runs) | {r.run_id for r in self.runs()}
        table = pivot(read_bundles(self.path("bundles.csv")), read_matches(self.path("match.csv")),
                      catalog, runs, known)
        write_pivot(table, self.path("pivot.csv"))
        self.summary["pivot_rows"] = len(table)

    def run(self, stage: str):
        self.out.mkdir(parents=True, exist_ok=True)
        if stage == "all":
            # a config without catalogs runs on a generated sky
            stages = PIPELINE if self.config.catalogs else STAGES
        else:
            stages = (stage,)
        for s in stages:
            logger.info("stage %s", s)
            getattr(self, s)()
        self.summary.update(self.report())
        _write_json(self.path("summary.json"), self.summary)
        return self.summary

    def report(self) -> dict:
        """Verdict counts and bundle-size histogram of whatever is on disk."""
        rep = {}
        for name in ("match.csv", "match_classified.csv", "hits.csv"):
            if self.path(name).is_file():
                rep["verdicts"] = verdict_counts(read_matches(self.path(name)))
                break
        if self.path("members.csv").is_file():
            members = read_members(self.path("members.csv"))
            rep["bundles"] = int(members["bundleID"].nunique())
            rep["bundle_sizes"] = {str(k): v for k, v in size_histogram(members).items()}
        return rep


def _write_json(path: Path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- verification --


def verify(config: PipelineConfig, out: Path, max_objects: int = 5000) -> dict:
    """Check stored (or freshly computed) results against the slow oracles.

    Uses ``objects.csv``/``match.csv``/``members.csv`` from ``out`` when
    present and otherwise runs the pipeline in memory on the configured
    catalogs. Returns ``{"hits": ..., "components": ..., "friends": ...}``
    with ``"PASS"``/``"FAIL"`` values and a ``details`` list.
    """
    out = Path(out)
    if (out / "objects.csv").is_file():
        runs = read_runs(out / "runs.json") if (out / "runs.json").is_file() else []
        catalog = load_catalog(out / "objects.csv", runs)
    elif config.catalogs:
        runs = [r for p in config.runs for r in read_runs(p)]
        catalog = load_catalogs(config.catalogs, runs)
    else:
        runs, catalog = [], Catalog.empty()
    if len(catalog) > max_objects:
        raise ValueError(f"verify is limited to {max_objects} objects, input has {len(catalog)}; "
                         "run it on a smaller catalog or raise --max-objects")

    if (out / "match.csv").is_file() and (out / "members.csv").is_file():
        matches = read_matches(out / "match.csv")
        members = read_members(out / "members.csv")
    else:
        from .estimator import CrossMatch
        est = CrossMatch(distance=config.distance, zone_height=config.zone_height,
                         check_footprints=False).fit(catalog, runs=runs)
        matches, members = est.matches_, est.members_

    details = []
    kind = matches["hitOrMiss"].to_numpy()
    hit = matches[kind == Verdict.HIT.value]
    stored_hits = set(zip(hit["run1"], hit["objectID1"].astype(int), hit["run2"],
                          hit["objectID2"].astype(int)))
    oracle_hits = brute_force_hits(catalog, config.distance) if len(catalog) else set()
    ok_hits = stored_hits == oracle_hits
    if not ok_hits:
        details.append(f"hits: {len(oracle_hits - stored_hits)} missing, "
                       f"{len(stored_hits - oracle_hits)} spurious")

    # a Hit is a mutual relation; an unmirrored record is a defect, not an edge
    edges = {((a, b), (c, d)) for a, b, c, d in stored_hits}
    mutual = [(u, v) for u, v in edges if (v, u) in edges]
    if len(mutual) != len(edges):
        details.append(f"components: {len(edges) - len(mutual)} unmirrored Hit records")
    keys = list(zip(members["runID"], members["objectID"].astype(int)))
    ok_comp = (bfs_components(keys, mutual) == partition_of(keys, members["bundleID"])
               and len(mutual) == len(edges))
    if not ok_comp and len(mutual) == len(edges):
        details.append("components: bundle partition differs from BFS components")

    fr = matches[kind == Verdict.FRIEND.value]
    stored_friends = {((a, int(b)), (c, int(d))) for a, b, c, d in
                      zip(fr["run1"], fr["objectID1"], fr["run2"], fr["objectID2"])}
    ok_friends = stored_friends == friend_fixed_point(edges)
    if not ok_friends:
        details.append("friends: Friend records differ from the iterative fixed point")

    verdict = {True: "PASS", False: "FAIL"}
    return {"objects": len(catalog), "hits": verdict[ok_hits], "components": verdict[ok_comp],
            "friends": verdict[ok_friends], "details": details}


# -- entry point --


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmatch", description="Multi-run sky catalog cross-match.")
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--stage", default="all", choices=[*STAGES, "match", "all", "verify"],
                   help="stage to run ('match' is an alias of 'hits')")
    p.add_argument("--out", help="artifact directory (default: config 'out' or ./xmatch_out)")
    p.add_argument("--threads", type=int, help="cap on numeric library threads")
    p.add_argument("--seed", type=int, help="generator seed for 'gen'")
    p.add_argument("--distance", help="fixed:<arcsec> or scaled:<k>")
    p.add_argument("--zone-height", type=float, help="zone height in arcsec")
    p.add_argument("--max-objects", type=int, default=5000, help="size limit for 'verify'")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = PipelineConfig.load(args.config)
        if args.distance is not None:
            config.distance = str(parse_distance(args.distance))
        if args.zone_height is not None:
            if args.zone_height <= 0:
                raise ConfigError("--zone-height", "must be > 0")
            config.zone_height = args.zone_height
    except ConfigError as exc:
        print(f"xmatch: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"xmatch: config error: --distance: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else config.out
    stage = "hits" if args.stage == "match" else args.stage

    limits = None
    if args.threads:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(limits=args.threads)
    try:
        if stage == "verify":
            report = verify(config, out, args.max_objects)
            print(json.dumps(report, indent=1, sort_keys=True))
            return EXIT_OK if all(report[k] == "PASS" for k in ("hits", "components",
                                                                   "friends")) else EXIT_FAIL
        summary = Pipeline(config, out, args.seed).run(stage)
        print(json.dumps(summary, indent=1, sort_keys=True))
        return EXIT_OK
    except PrerequisiteError as exc:
        print(f"xmatch: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (CatalogError, ValueError, KeyError) as exc:
        print(f"xmatch: stage '{stage}' failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if limits is not None:
            limits.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
