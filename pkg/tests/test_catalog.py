import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xmatch.catalog import (
    Catalog,
    CatalogError,
    FixedDistance,
    RunMetadata,
    ScaledDistance,
    classification_distance,
    footprint_warnings,
    load_catalog,
    load_catalogs,
    parse_distance,
    read_runs,
    write_runs,
)
from xmatch.geometry import Region, radec_box

from conftest import box_run, make_catalog

HEADER = "runID,objectID,ra_deg,dec_deg,posErr_arcsec\n"


class TestLoadCatalog:
    def test_empty_stream(self):
        assert len(load_catalog(io.StringIO(""))) == 0
        assert len(load_catalog(io.StringIO(HEADER))) == 0

    def test_one_row_roundtrip(self):
        cat = load_catalog(io.StringIO(HEADER + "A,7,10.5,-3.25,0.2\n"))
        (obj,) = list(cat)
        assert (obj.run_id, obj.object_id, obj.position_error) == ("A", 7, 0.2)
        ra, dec = obj.position.radec
        assert ra == pytest.approx(10.5) and dec == pytest.approx(-3.25)
        assert load_catalog(io.StringIO(cat.to_csv())).to_csv() == cat.to_csv()

    def test_duplicate_key_named(self):
        with pytest.raises(CatalogError, match=r"line 3: duplicate key \(runID='A', objectID=7\)"):
            load_catalog(io.StringIO(HEADER + "A,7,1,1,0.1\nA,7,2,2,0.1\n"))

    @pytest.mark.parametrize("row, what", [
        ("A,x,1,1,0.1", "objectID"),
        ("A,0,1,1,0.1", "objectID"),
        ("A,1,1,91,0.1", "dec_deg"),
        ("A,1,360,1,0.1", "ra_deg"),
        ("A,1,1,1,-1", "posErr"),
        ("A,1,nan,1,0.1", "ra_deg"),
        (",1,1,1,0.1", "runID"),
    ])
    def test_malformed_rows_report_line(self, row, what):
        with pytest.raises(CatalogError, match=f"line 3: .*{what}"):
            load_catalog(io.StringIO(HEADER + "A,99,1,1,0.1\n" + row + "\n"))

    def test_bad_header(self):
        with pytest.raises(CatalogError, match="header"):
            load_catalog(io.StringIO("run,obj\nA,1\n"))

    def test_blank_error_uses_run_default(self):
        run = box_run("A", 0, 5, -1, 1, err=0.3)
        cat = load_catalog(io.StringIO(HEADER + "A,1,1,0,\n"), [run])
        assert cat.pos_err[0] == 0.3
        with pytest.raises(CatalogError, match="no run default"):
            load_catalog(io.StringIO(HEADER + "A,1,1,0,\n"))

    def test_extra_attributes_kept(self):
        cat = load_catalog(io.StringIO(HEADER.strip() + ",mag\nA,1,1,0,0.1,17.2\n"))
        assert cat.attribute_names == ["mag"]
        assert dict(next(iter(cat)).attributes) == {"mag": "17.2"}

    def test_rows_sorted_by_key(self):
        cat = load_catalog(io.StringIO(HEADER + "B,2,1,0,0.1\nA,9,1,0,0.1\nA,3,1,0,0.1\n"))
        assert list(zip(cat.run_ids, cat.object_ids)) == [("A", 3), ("A", 9), ("B", 2)]

    def test_load_catalogs_rejects_cross_file_duplicates(self, tmp_path):
        (tmp_path / "a.csv").write_text(HEADER + "A,1,1,0,0.1\n")
        (tmp_path / "b.csv").write_text(HEADER + "A,1,2,0,0.1\n")
        with pytest.raises(CatalogError, match="duplicate"):
            load_catalogs([tmp_path / "a.csv", tmp_path / "b.csv"])


class TestDistance:
    def test_fixed(self):
        assert classification_distance(FixedDistance(1.0), 0.1, 0.1) == 1.0

    def test_scaled(self):
        assert classification_distance(ScaledDistance(3), 0.1, 0.2) == pytest.approx(0.6)

    @given(st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(0.1, 10))
    def test_scaled_symmetric(self, e1, e2, k):
        fn = ScaledDistance(k)
        assert classification_distance(fn, e1, e2) == classification_distance(fn, e2, e1)

    def test_parse(self):
        assert parse_distance("fixed:1.5") == FixedDistance(1.5)
        assert parse_distance("scaled:3") == ScaledDistance(3.0)
        assert parse_distance(str(ScaledDistance(2.5))) == ScaledDistance(2.5)
        for bad in ("fixed", "fixed:-1", "linear:2", "scaled:x"):
            with pytest.raises(ValueError):
                parse_distance(bad)

    def test_nonpositive_errors_rejected(self):
        with pytest.raises(ValueError):
            classification_distance(FixedDistance(1.0), 0.0, 0.1)


def test_run_metadata_roundtrip(tmp_path):
    runs = [box_run("B", 0, 5, -1, 1, masks=Region.cap(*_cap())), box_run("A", 2, 7, -1, 1)]
    write_runs(runs, tmp_path / "runs.json")
    back = read_runs(tmp_path / "runs.json")
    assert [r.run_id for r in back] == ["A", "B"]
    assert back[1].to_json() == runs[0].to_json()


def _cap():
    from xmatch.geometry import SkyPosition
    return SkyPosition.from_radec(1.0, 0.0), 60.0


def test_run_metadata_validation():
    with pytest.raises(CatalogError):
        RunMetadata("A", Region.empty())
    with pytest.raises(CatalogError):
        RunMetadata("A", radec_box(0, 1, 0, 1), default_position_error=0.0)


def test_footprint_warnings():
    cat = make_catalog([("A", 1, 1.0, 0.0), ("A", 2, 9.0, 0.0), ("B", 1, 1.0, 0.0)])
    warnings = footprint_warnings(cat, [box_run("A", 0, 5, -1, 1)])
    assert len(warnings) == 2
    assert "object 2" in warnings[0] and "'B'" in warnings[1]


def test_catalog_locate_and_select():
    cat = make_catalog([("A", 1, 1.0, 0.0), ("B", 5, 1.0, 0.0)])
    assert list(cat.locate(["B", "A", "C"], [5, 1, 1])) == [1, 0, -1]
    assert cat.select_runs(["B"]).runs == ["B"]
    with pytest.raises(CatalogError):
        cat.concat(make_catalog([("A", 1, 2.0, 0.0)]))


def test_from_arrays_matches_frame():
    cat = Catalog.from_arrays(["A", "A"], [2, 1], np.array([1.0, 2.0]), np.array([0.0, 0.0]),
                              np.array([0.1, 0.1]))
    assert list(cat.object_ids) == [1, 2]
