import json

import pandas as pd
import pytest

from xmatch.cli import main
from xmatch.match import read_matches, write_matches


def _run(capsys, *args):
    code = main(list(map(str, args)))
    out, err = capsys.readouterr()
    return code, out, err


def _small_scenario(tmp_path, n_base=1500, n_runs=3):
    from xmatch.skygen import default_scenario
    cfg = {"scenario": default_scenario(seed=3, n_base=n_base, n_runs=n_runs,
                                        auto_masks=2).to_json()}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_all_on_scenario(tmp_path, capsys):
    cfg = _small_scenario(tmp_path)
    out = tmp_path / "out"
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out, "--stage", "all")
    assert code == 0
    summary = json.loads(stdout)
    assert {k: summary["verdicts"][k] for k in summary["expected_verdicts"]} \
        == summary["expected_verdicts"]
    for name in ("objects.csv", "hits.csv", "overlaps.json", "misses.csv",
                 "match_classified.csv", "match.csv", "members.csv", "bundles.csv",
                 "pivot.csv", "summary.json", "warnings.json"):
        assert (out / name).is_file(), name
    labels = pd.read_csv(out / "labels.csv", dtype={"run1": str, "run2": str})
    matches = read_matches(out / "match.csv")
    got = matches[matches["hitOrMiss"] != "Friend"].drop_duplicates(["run1", "objectID1", "run2"])
    merged = labels.merge(got, left_on=["run1", "objectID", "run2"],
                          right_on=["run1", "objectID1", "run2"], how="outer", indicator=True)
    assert (merged["_merge"] == "both").all()
    assert (merged["expectedVerdict"] == merged["hitOrMiss"]).all()


def test_stages_rerun_byte_identical(tmp_path, capsys):
    cfg = _small_scenario(tmp_path, n_base=800)
    out = tmp_path / "out"
    assert _run(capsys, "--config", cfg, "--out", out)[0] == 0
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    for stage in ("gen", "ingest", "hits", "misses", "classify", "fof", "bundles", "pivot"):
        assert _run(capsys, "--config", cfg, "--out", out, "--stage", stage)[0] == 0
        for p in out.iterdir():
            if p.name != "summary.json":
                assert p.read_bytes() == before[p.name], (stage, p.name)


def test_single_run_hits_empty(tmp_path, capsys):
    cat = tmp_path / "c.csv"
    cat.write_text("runID,objectID,ra_deg,dec_deg,posErr_arcsec\nA,1,1,1,0.1\nA,2,1,1.0001,0.1\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"catalogs": ["c.csv"]}))
    out = tmp_path / "out"
    assert _run(capsys, "--config", cfg, "--out", out, "--stage", "ingest")[0] == 0
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out, "--stage", "hits")
    assert code == 0
    assert (out / "hits.csv").read_text().strip().count("\n") == 0
    assert json.loads(stdout)["hits"] == 0


def test_pivot_before_fof(tmp_path, capsys):
    code, _, err = _run(capsys, "--out", tmp_path / "o", "--stage", "pivot")
    assert code == 3
    assert "stage 'pivot'" in err


@pytest.mark.parametrize("content, reason", [
    ("{not json", "invalid JSON"),
    ('{"catalogs": ["missing.csv"]}', "does not exist"),
    ('{"distance": "cubic:2"}', "unknown"),
    ('{"colour": 1}', "unknown keys"),
    ('[1, 2]', "object"),
])
def test_config_errors(tmp_path, capsys, content, reason):
    cfg = tmp_path / "bad.json"
    cfg.write_text(content)
    code, _, err = _run(capsys, "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    assert str(cfg) in err and reason in err


def test_missing_config_file(tmp_path, capsys):
    code, _, err = _run(capsys, "--config", tmp_path / "nope.json")
    assert code == 2 and "nope.json" in err


def test_bad_distance_flag(tmp_path, capsys):
    code, _, err = _run(capsys, "--distance", "fixed:-3", "--out", tmp_path / "o")
    assert code == 2 and "--distance" in err


def test_verify_pass_and_corruption(tmp_path, capsys):
    cfg = _small_scenario(tmp_path, n_base=900)
    out = tmp_path / "out"
    assert _run(capsys, "--config", cfg, "--out", out, "--threads", 1)[0] == 0
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out, "--stage", "verify")
    report = json.loads(stdout)
    assert code == 0
    assert (report["hits"], report["components"], report["friends"]) == ("PASS",) * 3

    matches = read_matches(out / "match.csv")
    first_hit = matches.index[matches["hitOrMiss"] == "Hit"][0]
    write_matches(matches.drop(index=first_hit), out / "match.csv")
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out, "--stage", "verify")
    assert code == 1
    assert json.loads(stdout)["components"] == "FAIL"


def test_verify_friends_on_chain(tmp_path, capsys):
    # three-run chain produces Friend records that the fixed point must reproduce
    from conftest import shifted
    ra2, dec2 = shifted(5.0, 1.0, 90.0, 0.8)
    ra3, dec3 = shifted(5.0, 1.0, 90.0, 1.5)
    mid = shifted(5.0, 1.0, 90.0, 0.75)
    ra2, dec2 = shifted(*mid, 0.0, (0.8 ** 2 - 0.75 ** 2) ** 0.5)
    (tmp_path / "c.csv").write_text(
        "runID,objectID,ra_deg,dec_deg,posErr_arcsec\n"
        f"a,1,5.0,1.0,0.1\nb,1,{ra2!r},{dec2!r},0.1\nc,1,{ra3!r},{dec3!r},0.1\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"catalogs": ["c.csv"]}))
    out = tmp_path / "out"
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out)
    assert code == 0 and json.loads(stdout)["verdicts"]["Friend"] == 2
    code, stdout, _ = _run(capsys, "--config", cfg, "--out", out, "--stage", "verify")
    assert code == 0 and json.loads(stdout)["friends"] == "PASS"


def test_verify_empty_is_vacuous_pass(tmp_path, capsys):
    code, stdout, _ = _run(capsys, "--out", tmp_path / "empty", "--stage", "verify")
    assert code == 0
    assert json.loads(stdout)["objects"] == 0


def test_verify_rejects_oversize(tmp_path, capsys):
    cfg = _small_scenario(tmp_path, n_base=900)
    out = tmp_path / "out"
    assert _run(capsys, "--config", cfg, "--out", out, "--stage", "gen")[0] == 0
    assert _run(capsys, "--config", cfg, "--out", out, "--stage", "ingest")[0] == 0
    code, _, err = _run(capsys, "--config", cfg, "--out", out, "--stage", "verify",
                        "--max-objects", 100)
    assert code == 1 and "max-objects" in err


def test_seed_flag_changes_catalog(tmp_path, capsys):
    cfg = _small_scenario(tmp_path, n_base=300)
    _run(capsys, "--config", cfg, "--out", tmp_path / "a", "--stage", "gen", "--seed", 1)
    _run(capsys, "--config", cfg, "--out", tmp_path / "b", "--stage", "gen", "--seed", 2)
    assert (tmp_path / "a/catalog.csv").read_bytes() != (tmp_path / "b/catalog.csv").read_bytes()
