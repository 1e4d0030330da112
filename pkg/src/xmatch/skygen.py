"""Synthetic multi-run sky catalogs with ground-truth verdict labels.

Base objects are scattered over the union of the run footprints and
observed by every run whose footprint contains them (outside that run's
masks), with truncated Gaussian jitter. Three populations are injected on
top: objects deleted from one run (ephemeral), objects inside another
run's mask (masked), and objects just outside another run's footprint
edge (edge). Every object keeps a margin of ``margin_factor`` pair
distances from any boundary it is not meant to sit on, so the expected
verdicts are unambiguous.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .catalog import Catalog, RunMetadata, parse_distance, write_runs
from .geometry import (
    RAD_PER_ARCSEC,
    Convex,
    HalfSpace,
    Region,
    SkyPosition,
    boundary_distance_rad,
    radec_box,
    radec_to_xyz,
    separation_rad,
    xyz_to_radec,
)
from .match import Verdict

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["run1", "objectID", "run2", "expectedVerdict"]
JITTER_CLIP = 3.0  # jitter radius is truncated at this many sigma
_EDGE_BAND = (0.4, 0.6)  # edge objects sit this fraction of d outside the boundary
_MAX_ROUNDS = 200


class ScenarioError(ValueError):
    """The scenario cannot be realized with the requested margins."""


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    box: tuple[float, float, float, float]  # ra_min, ra_max, dec_min, dec_max (deg)
    masks: tuple[tuple[float, float, float], ...] = ()  # (ra, dec, radius arcsec)
    jitter: float = 0.1
    position_error: float = 0.1
    epoch: float | None = None

    def footprint(self) -> Region:
        return radec_box(*self.box, region_id=f"footprint:{self.run_id}")

    def mask_region(self) -> Region:
        convexes = tuple(Convex((HalfSpace.cap(SkyPosition.from_radec(ra, dec), r),))
                         for ra, dec, r in self.masks)
        return Region(convexes, f"masks:{self.run_id}")

    def metadata(self) -> RunMetadata:
        return RunMetadata(self.run_id, self.footprint(), self.mask_region(),
                           self.position_error, self.epoch)


@dataclass(frozen=True)
class Scenario:
    """Generator configuration.

    ``injections`` maps ``ephemeral``/``masked``/``edge`` to fractions of
    ``n_base``. ``auto_masks`` adds that many masks of ``mask_radius``
    arcsec per run, placed where the run overlaps another run.
    """

    seed: int = 1
    runs: tuple[RunSpec, ...] = ()
    n_base: int = 10_000
    injections: dict = field(default_factory=lambda: {"ephemeral": 0.11, "masked": 0.005,
                                                      "edge": 0.05})
    distance: str = "fixed:1.0"
    margin_factor: float = 10.0
    min_separation: float | None = None
    auto_masks: int = 0
    mask_radius: float = 90.0

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        runs = tuple(
            RunSpec(
                run_id=str(r["runID"]),
                box=tuple(float(v) for v in r["box"]),
                masks=tuple(tuple(float(v) for v in m) for m in r.get("masks", ())),
                jitter=float(r.get("jitter_arcsec", 0.1)),
                position_error=float(r.get("posErr_arcsec", 0.1)),
                epoch=r.get("epoch_mjd"),
            )
            for r in data["runs"]
        )
        return cls(
            seed=int(data.get("seed", 1)),
            runs=runs,
            n_base=int(data.get("n_base", 10_000)),
            injections=dict(data.get("injections", {})),
            distance=str(data.get("distance", "fixed:1.0")),
            margin_factor=float(data.get("margin_factor", 10.0)),
            min_separation=data.get("min_separation"),
            auto_masks=int(data.get("auto_masks", 0)),
            mask_radius=float(data.get("mask_radius", 90.0)),
        )

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_base": self.n_base,
            "injections": dict(self.injections),
            "distance": self.distance,
            "margin_factor": self.margin_factor,
            "min_separation": self.min_separation,
            "auto_masks": self.auto_masks,
            "mask_radius": self.mask_radius,
            "runs": [{"runID": r.run_id, "box": list(r.box), "masks": [list(m) for m in r.masks],
                      "jitter_arcsec": r.jitter, "posErr_arcsec": r.position_error,
                      "epoch_mjd": r.epoch} for r in self.runs],
        }


def strip_runs(n_runs: int, length: float = 20.0, height: float = 2.5,
               step: float = 2.0, jitter: float = 0.1) -> tuple[RunSpec, ...]:
    """Parallel strips along ra, each overlapping the next by ``height - step``."""
    return tuple(
        RunSpec(run_id=f"run{k + 1}",
                box=(0.0, length, -height / 2 + k * step, height / 2 + k * step),
                jitter=jitter, epoch=53000.0 + 30.0 * k)
        for k in range(n_runs)
    )


def default_scenario(seed: int = 1, n_base: int = 10_000, n_runs: int = 2,
                     **kwargs) -> Scenario:
    """Long narrow strip overlaps with an 11% / 0.5% / 5% ephemeral, masked, edge mix."""
    kwargs.setdefault("auto_masks", 5)
    return Scenario(seed=seed, runs=strip_runs(n_runs), n_base=n_base, **kwargs)


@dataclass(frozen=True, eq=False)
class SkyGenResult:
    catalog: Catalog
    runs: list[RunMetadata]
    labels: pd.DataFrame
    truth: pd.DataFrame  # runID, objectID, baseID, population
    scenario: Scenario  # as requested; regenerating from it reproduces this result
    specs: tuple = ()  # realized runs, including auto-placed masks

    def label_counts(self) -> dict[str, int]:
        counts = self.labels["expectedVerdict"].value_counts()
        return {v: int(counts.get(v, 0)) for v in
                (Verdict.HIT.value, Verdict.EPHEMERAL.value, Verdict.MASKED.value,
                 Verdict.EDGE.value)}

    def write(self, outdir) -> dict[str, Path]:
        """Write ``catalog.csv``, ``runs.json``, ``labels.csv`` and ``scenario.json``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "catalog": outdir / "catalog.csv",
            "runs": outdir / "runs.json",
            "labels": outdir / "labels.csv",
            "scenario": outdir / "scenario.json",
        }
        self.catalog.to_csv(paths["catalog"])
        write_runs(self.runs, paths["runs"])
        self.labels.to_csv(paths["labels"], index=False, lineterminator="\n")
        with open(paths["scenario"], "w", encoding="utf-8") as fh:
            json.dump(self.scenario.to_json(), fh, indent=1)
            fh.write("\n")
        return paths


# -- sampling helpers ----


def _sample_box(rng, n, box) -> np.ndarray:
    ra0, ra1, dec0, dec1 = box
    ra = rng.uniform(ra0, ra1, n) % 360.0
    z = rng.uniform(math.sin(math.radians(dec0)), math.sin(math.radians(dec1)), n)
    return radec_to_xyz(ra, np.degrees(np.arcsin(z)))


def _union_box(specs: Sequence[RunSpec]):
    boxes = np.array([s.box for s in specs])
    return boxes[:, 0].min(), boxes[:, 1].max(), boxes[:, 2].min(), boxes[:, 3].max()


def _tangent_basis(p: np.ndarray):
    north = np.zeros_like(p)
    north[:, 2] = 1.0
    north -= p[:, 2:3] * p
    polar = np.linalg.norm(north, axis=1) < 1e-12
    north[polar] = [1.0, 0.0, 0.0] - p[polar, 0:1] * p[polar]
    north /= np.linalg.norm(north, axis=1, keepdims=True)
    east = np.cross(north, p)
    return east, north


def _jitter(rng, p: np.ndarray, sigma: float) -> np.ndarray:
    """Isotropic Gaussian tangent-plane offsets, radius truncated at JITTER_CLIP sigma."""
    if sigma <= 0 or not len(p):
        return p.copy()
    d = rng.normal(0.0, sigma, size=(len(p), 2))
    r = np.hypot(d[:, 0], d[:, 1])
    scale = np.where(r > JITTER_CLIP * sigma, JITTER_CLIP * sigma / np.maximum(r, 1e-300), 1.0)
    d *= scale[:, None] * RAD_PER_ARCSEC
    east, north = _tangent_basis(p)
    dist = np.hypot(d[:, 0], d[:, 1])
    direction = (d[:, 0:1] * east + d[:, 1:2] * north) / np.maximum(dist, 1e-300)[:, None]
    q = np.cos(dist)[:, None] * p + np.sin(dist)[:, None] * direction
    return q / np.linalg.norm(q, axis=1, keepdims=True)


class _Sky:
    """Geometry of a scenario, with the margin tests used for rejection."""

    def __init__(self, scenario: Scenario, specs: Sequence[RunSpec]):
        self.specs = list(specs)
        self.meta = [s.metadata() for s in specs]
        fn = parse_distance(scenario.distance)
        self.pair_d = np.array([[float(fn(a.position_error, b.position_error)) for b in specs]
                                for a in specs])
        self.d_max = float(self.pair_d.max()) if len(specs) > 1 else float(
            fn(specs[0].position_error, specs[0].position_error))
        self.margin = scenario.margin_factor * self.d_max * RAD_PER_ARCSEC

    def footprint_clearance(self, p, skip=None) -> np.ndarray:
        """Distance (rad) to the nearest footprint boundary circle, optionally
        ignoring one (run index, halfspace index)."""
        dist = np.full(len(p), np.inf)
        for k, m in enumerate(self.meta):
            for c in m.footprint.convexes:
                for h_i, h in enumerate(c.halfspaces):
                    if skip == (k, h_i):
                        continue
                    ang = separation_rad(p, np.asarray(h.normal))
                    dist = np.minimum(dist, np.abs(h.angle - ang))
        return dist

    def mask_clearance(self, p) -> np.ndarray:
        dist = np.full(len(p), np.inf)
        for m in self.meta:
            if m.masks.convexes:
                dist = np.minimum(dist, boundary_distance_rad(m.masks, p))
        return dist

    def in_footprints(self, p) -> np.ndarray:
        return np.stack([m.footprint.contains(p) for m in self.meta], axis=1)

    def in_masks(self, p) -> np.ndarray:
        return np.stack([m.masks.contains(p) for m in self.meta], axis=1)

    def clean(self, p) -> np.ndarray:
        """Far from every footprint boundary, and outside every mask with margin."""
        return ((self.footprint_clearance(p) >= self.margin)
                & (self.mask_clearance(p) >= self.margin)
                & ~self.in_masks(p).any(axis=1))


def _place_masks(rng, scenario: Scenario, sky: _Sky) -> list[RunSpec]:
    specs = list(sky.specs)
    if scenario.auto_masks <= 0 or len(specs) < 2:
        return specs
    radius = scenario.mask_radius * RAD_PER_ARCSEC
    box = _union_box(specs)
    placed: list[np.ndarray] = []
    new_specs = []
    for k, spec in enumerate(specs):
        masks = list(spec.masks)
        need = scenario.auto_masks
        for _ in range(_MAX_ROUNDS):
            if need == 0:
                break
            cand = _sample_box(rng, 2000, box)
            inside = sky.in_footprints(cand)
            ok = inside[:, k] & (inside.sum(axis=1) >= 2)
            ok &= sky.footprint_clearance(cand) >= radius + 2 * sky.margin
            for i in np.flatnonzero(ok):
                if need == 0:
                    break
                if placed and np.min(separation_rad(np.array(placed), cand[i])) < 2 * radius + 2 * sky.margin:
                    continue
                placed.append(cand[i])
                ra, dec = xyz_to_radec(cand[i])
                masks.append((float(ra), float(dec), scenario.mask_radius))
                need -= 1
        if need:
            raise ScenarioError(f"could not place {scenario.auto_masks} masks in run {spec.run_id}")
        new_specs.append(RunSpec(spec.run_id, spec.box, tuple(masks), spec.jitter,
                                 spec.position_error, spec.epoch))
    return new_specs


class _Spacer:
    """Keeps accepted true positions at least ``min_sep`` apart."""

    def __init__(self, min_sep_rad: float):
        self.chord = 2 * math.sin(min_sep_rad / 2)
        self.points = np.empty((0, 3))

    def accept(self, cand: np.ndarray, limit: int) -> np.ndarray:
        """Indices of candidates kept, at most ``limit`` of them."""
        idx = np.arange(len(cand))
        if not len(cand) or limit <= 0:
            return idx[:0]
        if len(self.points):
            d, _ = cKDTree(self.points).query(cand, k=1)
            idx = idx[d >= self.chord]
        if len(idx) > 1:
            pairs = cKDTree(cand[idx]).query_pairs(self.chord, output_type="ndarray")
            drop = np.zeros(len(idx), dtype=bool)
            if len(pairs):
                drop[pairs.max(axis=1)] = True
            idx = idx[~drop]
        idx = idx[:limit]
        self.points = np.concatenate([self.points, cand[idx]])
        return idx


def _draw(want: int, proposal, spacer: _Spacer, what: str):
    """Rejection-sample ``want`` points from ``proposal(n) -> (points, payload)``."""
    got_p, got_x = [], []
    have = 0
    batch = max(256, 2 * want)
    for _ in range(_MAX_ROUNDS):
        if have >= want:
            break
        cand, payload = proposal(batch)
        idx = spacer.accept(cand, want - have)
        if len(idx):
            got_p.append(cand[idx])
            if payload is not None:
                got_x.append(payload[idx])
            have += len(idx)
        if have < want:
            batch = min(batch * 2, 2_000_000)
    if have < want:
        raise ScenarioError(f"could not place {want} {what} objects with the requested margins "
                            f"(placed {have})")
    pts = np.concatenate(got_p) if got_p else np.empty((0, 3))
    payload = np.concatenate(got_x) if got_x else None
    return pts, payload


def generate(scenario: Scenario) -> SkyGenResult:
    """Realize a scenario: catalog, run metadata, and expected verdict labels.

    Raises
    ------
    ScenarioError
        If jitter is too large for unambiguous labels, or the margins leave
        no room for a requested population.
    """
    if not scenario.runs:
        raise ScenarioError("scenario has no runs")
    ids = [r.run_id for r in scenario.runs]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate runID in scenario")
    rng = np.random.default_rng(scenario.seed)
    sky = _Sky(scenario, scenario.runs)
    specs = _place_masks(rng, scenario, sky)
    sky = _Sky(scenario, specs)
    d_min = float(sky.pair_d.min())
    sigma = max(s.jitter for s in specs)
    if 2 * JITTER_CLIP * sigma >= d_min:
        raise ScenarioError(f"jitter {sigma}\" too large for classification distance {d_min}\"")
    fractions = {k: float(scenario.injections.get(k, 0.0)) for k in ("ephemeral", "masked", "edge")}
    if fractions["edge"] and JITTER_CLIP * sigma >= _EDGE_BAND[0] * d_min:
        raise ScenarioError("jitter too large to keep edge objects inside the edge zone")
    n_inj = {k: int(round(f * scenario.n_base)) for k, f in fractions.items()}
    if len(specs) < 2:
        n_inj = {k: 0 for k in n_inj}
    n_plain = scenario.n_base - sum(n_inj.values())
    if n_plain < 0:
        raise ScenarioError("injection fractions exceed 1")

    min_sep = scenario.min_separation or 5.0 * sky.d_max + 2 * JITTER_CLIP * sigma
    spacer = _Spacer(float(min_sep) * RAD_PER_ARCSEC)
    box = _union_box(specs)
    n_runs = len(specs)

    def plain_proposal(n):
        p = _sample_box(rng, n, box)
        ok = sky.clean(p) & sky.in_footprints(p).any(axis=1)
        return p[ok], None

    def multi_proposal(n):
        p, _ = plain_proposal(n)
        inside = sky.in_footprints(p)
        p, inside = p[inside.sum(axis=1) >= 2], inside[inside.sum(axis=1) >= 2]
        # drop from one random containing run
        score = rng.random(inside.shape) * inside
        target = np.argmax(score, axis=1)
        return p, target

    def masked_proposal(n):
        owners = [(k, c) for k, m in enumerate(sky.meta) for c in m.masks.convexes]
        if not owners:
            raise ScenarioError("masked injections requested but no run has masks")
        pick = rng.integers(0, len(owners), n)
        pts = np.empty((n, 3))
        target = np.empty(n, dtype=np.int64)
        for j, (k, c) in enumerate(owners):
            sel = np.flatnonzero(pick == j)
            h = c.halfspaces[0]
            depth = h.angle - sky.margin - JITTER_CLIP * sigma * RAD_PER_ARCSEC
            if depth <= 0:
                raise ScenarioError("masks too small for the requested margin")
            cos_t = rng.uniform(math.cos(depth), 1.0, len(sel))
            phi = rng.uniform(0, 2 * math.pi, len(sel))
            nvec = np.asarray(h.normal)
            east, north = _tangent_basis(nvec[None, :])
            sin_t = np.sqrt(1 - cos_t ** 2)
            pts[sel] = (cos_t[:, None] * nvec + sin_t[:, None]
                        * (np.cos(phi)[:, None] * east + np.sin(phi)[:, None] * north))
            target[sel] = k
        inside = sky.in_footprints(pts)
        in_mask = sky.in_masks(pts)
        ok = (sky.footprint_clearance(pts) >= sky.margin)
        ok &= inside[np.arange(n), target] & (inside.sum(axis=1) >= 2)
        ok &= in_mask.sum(axis=1) == 1
        return pts[ok], target[ok]

    halfspace_refs = [(k, h_i, h) for k, m in enumerate(sky.meta)
                      for c in m.footprint.convexes for h_i, h in enumerate(c.halfspaces)]
    h_convex = {(k, h_i): c for k, m in enumerate(sky.meta)
                for c in m.footprint.convexes for h_i, _ in enumerate(c.halfspaces)}
    if fractions["edge"] and any(len(m.footprint.convexes) != 1 for m in sky.meta):
        raise ScenarioError("edge injection needs single-convex footprints")

    def edge_proposal(n):
        pick = rng.integers(0, len(halfspace_refs), n)
        base = _sample_box(rng, n, box)
        pts = np.empty((n, 3))
        target = np.empty(n, dtype=np.int64)
        ok = np.ones(n, dtype=bool)
        for j, (k, h_i, h) in enumerate(halfspace_refs):
            sel = np.flatnonzero(pick == j)
            if not len(sel):
                continue
            nvec = np.asarray(h.normal)
            along = base[sel] - (base[sel] @ nvec)[:, None] * nvec
            norm = np.linalg.norm(along, axis=1)
            ok[sel] &= norm > 1e-9
            along /= np.maximum(norm, 1e-300)[:, None]
            # only pairs (r1, k) with r1 != k; use the smallest pair distance
            # of run k so the band sits inside every pair's edge zone
            d = float(np.min(np.delete(sky.pair_d[:, k], k))) * RAD_PER_ARCSEC
            frac = rng.uniform(*_EDGE_BAND, len(sel))
            theta = h.angle + frac * d
            pts[sel] = np.cos(theta)[:, None] * nvec + np.sin(theta)[:, None] * along
            target[sel] = k
            clear = sky.footprint_clearance(pts[sel], skip=(k, h_i))
            ok[sel] &= clear >= sky.margin
            others = Convex(tuple(g for g_i, g in enumerate(h_convex[(k, h_i)].halfspaces)
                                  if g_i != h_i))
            ok[sel] &= others.contains(pts[sel])
        inside = sky.in_footprints(pts)
        ok &= ~inside[np.arange(n), target]
        ok &= inside.any(axis=1)
        ok &= (sky.mask_clearance(pts) >= sky.margin) & ~sky.in_masks(pts).any(axis=1)
        return pts[ok], target[ok]

    populations = []
    populations.append(("edge", *_draw(n_inj["edge"], edge_proposal, spacer, "edge")))
    populations.append(("masked", *_draw(n_inj["masked"], masked_proposal, spacer, "masked")))
    populations.append(("ephemeral", *_draw(n_inj["ephemeral"], multi_proposal, spacer,
                                            "ephemeral")))
    populations.append(("plain", *_draw(n_plain, plain_proposal, spacer, "base")))

    true_xyz = np.concatenate([p for _, p, _ in populations])
    kind = np.concatenate([np.full(len(p), name) for name, p, _ in populations])
    target = np.concatenate([t if t is not None else np.full(len(p), -1)
                             for _, p, t in populations]).astype(np.int64)

    detected = sky.in_footprints(true_xyz) & ~sky.in_masks(true_xyz)
    eph = np.flatnonzero(kind == "ephemeral")
    detected[eph, target[eph]] = False

    # observed positions and per-run object IDs
    frames = []
    truth = []
    obj_id = np.zeros((len(true_xyz), n_runs), dtype=np.int64)
    for k, spec in enumerate(specs):
        rows = np.flatnonzero(detected[:, k])
        obs = _jitter(rng, true_xyz[rows], spec.jitter)
        ra, dec = xyz_to_radec(obs)
        ids_k = np.arange(1, len(rows) + 1, dtype=np.int64)
        obj_id[rows, k] = ids_k
        frames.append(pd.DataFrame({
            "runID": spec.run_id, "objectID": ids_k, "ra_deg": ra, "dec_deg": dec,
            "posErr_arcsec": spec.position_error,
        }))
        truth.append(pd.DataFrame({"runID": spec.run_id, "objectID": ids_k,
                                   "baseID": rows + 1, "population": kind[rows]}))
    catalog = Catalog(pd.concat(frames, ignore_index=True))
    truth = pd.concat(truth, ignore_index=True)

    labels = []
    verdict_of = {"ephemeral": Verdict.EPHEMERAL.value, "masked": Verdict.MASKED.value,
                  "edge": Verdict.EDGE.value}
    for a in range(n_runs):
        for b in range(n_runs):
            if a == b:
                continue
            both = np.flatnonzero(detected[:, a] & detected[:, b])
            labels.append(pd.DataFrame({"run1": specs[a].run_id, "objectID": obj_id[both, a],
                                        "run2": specs[b].run_id,
                                        "expectedVerdict": Verdict.HIT.value}))
            for name, verdict in verdict_of.items():
                rows = np.flatnonzero(detected[:, a] & ~detected[:, b] & (kind == name)
                                      & (target == b))
                labels.append(pd.DataFrame({"run1": specs[a].run_id, "objectID": obj_id[rows, a],
                                            "run2": specs[b].run_id,
                                            "expectedVerdict": verdict}))
    labels = (pd.concat(labels, ignore_index=True) if labels
              else pd.DataFrame({c: pd.Series(dtype=object if c != "objectID" else np.int64)
                                 for c in LABEL_COLUMNS}))
    labels = labels.sort_values(["run1", "objectID", "run2"], kind="mergesort").reset_index(drop=True)

    runs = [s.metadata() for s in specs]
    result = SkyGenResult(catalog, runs, labels, truth, scenario, tuple(specs))
    logger.info("generated %d detections over %d runs, %d labels", len(catalog), n_runs,
                len(labels))
    return result


def check_margins(result: SkyGenResult) -> list[str]:
    """Re-check every object's margin invariants from the catalog positions.

    Returns a list of violations (empty when the scenario is clean).
    """
    sc = result.scenario
    sky = _Sky(sc, result.specs)
    cat = result.catalog
    problems = []
    pops = result.truth.set_index(["runID", "objectID"])["population"]
    for spec in result.specs:
        rows = np.flatnonzero(cat.run_ids == spec.run_id)
        if not len(rows):
            continue
        xyz = cat.xyz[rows]
        pop = pops.loc[spec.run_id].loc[cat.object_ids[rows]].to_numpy()
        clear = sky.footprint_clearance(xyz)
        jitter_rad = JITTER_CLIP * spec.jitter * RAD_PER_ARCSEC
        plain = np.isin(pop, ["plain", "ephemeral"])
        bad = plain & (clear < sky.margin - jitter_rad)
        bad |= plain & (sky.mask_clearance(xyz) < sky.margin - jitter_rad)
        masked = pop == "masked"
        bad |= masked & (clear < sky.margin - jitter_rad)
        for i in np.flatnonzero(bad):
            problems.append(f"{spec.run_id}/{int(cat.object_ids[rows[i]])} ({pop[i]}) "
                            "violates its margin")
    return problems


__all__ = ["LABEL_COLUMNS", "RunSpec", "Scenario", "ScenarioError", "SkyGenResult",
           "check_margins", "default_scenario", "generate", "strip_runs"]
