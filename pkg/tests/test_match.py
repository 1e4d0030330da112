import io

import numpy as np
import pytest

from xmatch.geometry import RAD_PER_ARCSEC, offset_position, radec_to_xyz, xyz_to_radec
from xmatch.match import (
    MATCH_COLUMNS,
    Verdict,
    check_symmetry,
    compute_hits,
    read_matches,
    records,
    write_matches,
)
from xmatch.oracles import brute_force_hits

from conftest import make_catalog


def _keys(hits):
    return set(zip(hits["run1"], hits["objectID1"], hits["run2"], hits["objectID2"]))


def test_identical_positions_two_records():
    hits = compute_hits(make_catalog([("A", 1, 5.0, 1.0), ("B", 1, 5.0, 1.0)]), "fixed:1.0")
    assert _keys(hits) == {("A", 1, "B", 1), ("B", 1, "A", 1)}
    assert (hits["hitOrMiss"] == "Hit").all()
    assert list(hits.columns) == MATCH_COLUMNS


def test_single_run_no_records():
    hits = compute_hits(make_catalog([("A", 1, 5.0, 1.0), ("A", 2, 5.0, 1.0)]), "fixed:1.0")
    assert hits.empty


def test_boundary_is_strict():
    # exactly 1" apart on the equator is not a hit
    cat = make_catalog([("A", 1, 0.0, 0.0), ("B", 1, 1.0 / 3600, 0.0)])
    assert compute_hits(cat, "fixed:1.0").empty
    assert len(compute_hits(cat, "fixed:1.0001")) == 2


def test_jittered_duplicate_matches_oracle(rng):
    n = 500
    ra, dec = rng.uniform(10, 10.2, n), rng.uniform(-0.1, 0.1, n)
    base = radec_to_xyz(ra, dec)
    moved = np.array([offset_position(p, b, abs(d) * RAD_PER_ARCSEC) for p, b, d in
                      zip(base, rng.uniform(0, 2 * np.pi, n), rng.normal(0, 0.2, n))])
    ra2, dec2 = xyz_to_radec(moved)
    rows = ([("A", i + 1, ra[i], dec[i]) for i in range(n)]
            + [("B", i + 1, ra2[i], dec2[i]) for i in range(n)])
    cat = make_catalog(rows)
    hits = compute_hits(cat, "fixed:1.0")
    assert _keys(hits) == brute_force_hits(cat, "fixed:1.0")
    assert check_symmetry(hits) == 0
    assert len(hits) >= 2 * n


def test_scaled_distance_uses_pair_errors():
    cat = make_catalog([("A", 1, 0.0, 0.0, 0.1), ("B", 1, 0.5 / 3600, 0.0, 0.3),
                        ("C", 1, 0.5 / 3600, 0.0, 0.1)])
    keys = _keys(compute_hits(cat, "scaled:3"))
    # A-B limit 0.9", A-C limit 0.3", B-C limit 0.9"
    assert ("A", 1, "B", 1) in keys and ("A", 1, "C", 1) not in keys
    assert keys == brute_force_hits(cat, "scaled:3")


def test_symmetry_check_counts_missing_mirror():
    hits = compute_hits(make_catalog([("A", 1, 5.0, 1.0), ("B", 1, 5.0, 1.0)]), "fixed:1.0")
    assert check_symmetry(hits.iloc[:1]) == 1


def test_csv_roundtrip():
    hits = compute_hits(make_catalog([("A", 1, 5.0, 1.0), ("B", 2, 5.0, 1.0 + 0.5 / 3600)]),
                        "fixed:1.0")
    text = write_matches(hits)
    back = read_matches(io.StringIO(text))
    assert write_matches(back) == text
    rec = next(records(back))
    assert rec.hit_or_miss is Verdict.HIT and rec.separation == pytest.approx(0.5, abs=1e-6)
