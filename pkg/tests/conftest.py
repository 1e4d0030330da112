import numpy as np
import pandas as pd
import pytest

from xmatch.catalog import Catalog, RunMetadata
from xmatch.geometry import RAD_PER_ARCSEC, Region, SkyPosition, offset_position, radec_box


def make_catalog(rows, err=0.1):
    """Catalog from (runID, objectID, ra, dec[, posErr]) tuples."""
    rows = [tuple(r) + (err,) * (5 - len(r)) for r in rows]
    frame = pd.DataFrame(rows, columns=["runID", "objectID", "ra_deg", "dec_deg", "posErr_arcsec"])
    return Catalog(frame)


def box_run(run_id, ra_min, ra_max, dec_min, dec_max, masks=None, err=0.1):
    return RunMetadata(run_id=run_id, footprint=radec_box(ra_min, ra_max, dec_min, dec_max, run_id),
                       masks=masks if masks is not None else Region.empty(),
                       default_position_error=err)


def shifted(ra, dec, bearing_deg, arcsec):
    """(ra, dec) moved by ``arcsec`` along ``bearing_deg`` (0 = north)."""
    p = SkyPosition.from_radec(ra, dec).vector
    q = offset_position(p, np.radians(bearing_deg), arcsec * RAD_PER_ARCSEC)
    return SkyPosition(*q).radec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
