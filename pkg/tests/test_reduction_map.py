from __future__ import annotations

import math
from datetime import datetime
from zoneinfo import ZoneInfo

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noxscreen.errors import OutOfDomain
from noxscreen.factors import TOTAL, Cohort, EmissionFactor, FactorTable
from noxscreen.ingest import Trip
from noxscreen.reduction_map import (
    EARTH_RADIUS_KM,
    GridSpec,
    Period,
    ReductionGrid,
    accumulate,
    export_geojson,
    period_of,
    project,
    read_geojson,
    resolve_tz,
    traversal_distance,
    write_cells_csv,
)

from conftest import rec

G = GridSpec(30.0, 104.0)
SHANGHAI = ZoneInfo("Asia/Shanghai")


def local_ts(hour, minute=0):
    return datetime(2022, 6, 1, hour, minute, tzinfo=SHANGHAI).timestamp()


def factors(nbv=4.8, he=14.2, key="Medium"):
    t = FactorTable()
    if nbv is not None:
        t[(Cohort.NBV, key)] = EmissionFactor(Cohort.NBV, key, 0.0, nbv, 10)
    if he is not None:
        t[(Cohort.HE, key)] = EmissionFactor(Cohort.HE, key, 0.0, he, 10)
    return t


def northbound(km, n_seg=10, t0=None, vid="H1", speed=50.0, accel=0.0, lat0=30.0, lon=104.001):
    """Trip along a meridian whose great-circle length is exactly ``km``."""
    t0 = local_ts(10) if t0 is None else t0
    dlat = math.degrees(km / EARTH_RADIUS_KM) / n_seg
    dt = km / n_seg / speed * 3600
    recs = [rec(t0 + i * dt, speed=speed, lat=lat0 + i * dlat, lon=lon, vid=vid) for i in range(n_seg + 1)]
    return Trip(vid, recs, 0.0, 0.0, f"{vid}-0", [accel] * len(recs), [False] * len(recs))


class TestGeometry:
    @pytest.mark.parametrize("dx_m,expected", [(0.0, (0, 0)), (250.0, (1, 0)), (199.0, (0, 0)), (-1.0, (-1, 0))])
    def test_project_east(self, dx_m, expected):
        assert project(G.origin_lat, G.origin_lon + dx_m / G.m_per_deg_lon, G) == expected

    def test_project_north(self):
        assert project(G.origin_lat + 450 / 110540, G.origin_lon, G) == (0, 2)

    def test_scale(self):
        assert G.m_per_deg_lon == pytest.approx(111320 * math.cos(math.radians(30)))

    def test_one_degree_at_equator(self):
        assert traversal_distance((0, 0), (0, 1)) == pytest.approx(111.19, abs=0.1)

    @given(st.floats(-80, 80), st.floats(-179, 179), st.floats(-80, 80), st.floats(-179, 179))
    def test_symmetric_and_non_negative(self, a, b, c, d):
        x = traversal_distance((a, b), (c, d))
        assert x >= 0 and x == pytest.approx(traversal_distance((c, d), (a, b)), abs=1e-9)

    @pytest.mark.parametrize("lat,lon", [(91, 0), (0, 181), (math.nan, 0)])
    def test_out_of_domain(self, lat, lon):
        with pytest.raises(OutOfDomain):
            project(lat, lon, G)

    def test_bad_cell_size(self):
        with pytest.raises(ValueError):
            GridSpec(30, 104, 0)


class TestPeriod:
    @pytest.mark.parametrize("hour,minute,period", [(8, 0, Period.DAY), (7, 59, Period.NIGHT),
                                                    (19, 59, Period.DAY), (20, 0, Period.NIGHT), (2, 0, Period.NIGHT)])
    def test_local_window(self, hour, minute, period):
        assert period_of(local_ts(hour, minute), SHANGHAI) is period

    def test_utc(self):
        ts = datetime(2022, 6, 1, 1, 0, tzinfo=ZoneInfo("UTC")).timestamp()
        assert period_of(ts, resolve_tz("UTC")) is Period.NIGHT
        assert period_of(ts, SHANGHAI) is Period.DAY


class TestAccumulate:
    def test_ten_km_daytime(self):
        grid = accumulate([northbound(10.0)], {"H1"}, factors(), G)
        assert grid.reduction[Period.DAY] == pytest.approx(94.0, rel=1e-9)
        assert grid.reduction[Period.NIGHT] == 0
        assert grid.baseline[Period.DAY] == pytest.approx(48.0, rel=1e-9)
        assert grid.relative_savings == pytest.approx(94 / 142, rel=1e-9)
        assert grid.dispositions == {"ok": 10}

    def test_unflagged_contributes_nothing(self):
        grid = accumulate([northbound(10.0, vid="N1")], set(), factors(), G)
        assert grid.total_reduction == 0 and grid.total_baseline == pytest.approx(48.0)
        assert all(c.distance_he == 0 for c in grid.cells.values())

    def test_verdict_mapping(self):
        class V:
            def __init__(self, flagged):
                self.flagged = flagged

        grid = accumulate([northbound(1.0), northbound(1.0, vid="N1")], {"H1": V(True), "N1": V(False)}, factors(), G)
        assert grid.flagged_vehicles == {"H1"} and grid.vehicles == {"H1", "N1"}

    def test_night(self):
        grid = accumulate([northbound(10.0, t0=local_ts(22))], {"H1"}, factors(), G)
        assert grid.reduction[Period.NIGHT] == pytest.approx(94.0) and grid.reduction[Period.DAY] == 0

    def test_equal_factors_give_zero(self):
        grid = accumulate([northbound(5.0)], {"H1"}, factors(4.8, 4.8), G)
        assert grid.total_reduction == 0 and all(c.reduction == 0 for c in grid.cells.values())

    def test_cleaner_he_is_clamped(self):
        assert accumulate([northbound(5.0)], {"H1"}, factors(4.8, 3.0), G).total_reduction == 0

    def test_missing_factor(self):
        grid = accumulate([northbound(2.0)], {"H1"}, factors(4.8, None), G)
        assert grid.dispositions == {"missing_factor": 10} and grid.total_reduction == 0

    def test_braking_segments(self):
        grid = accumulate([northbound(2.0, accel=-2.0)], {"H1"}, factors(), G)
        assert grid.dispositions == {"braking_idle": 10}
        assert sum(grid.distance.values()) == pytest.approx(2.0)

    def test_invalid_position_skipped(self):
        t = northbound(2.0)
        t.records[3].lat = 95.0
        grid = accumulate([t], {"H1"}, factors(), G)
        assert grid.dispositions["invalid_position"] == 2 and grid.dispositions["ok"] == 8

    def test_total_key_applies_everywhere(self):
        grid = accumulate([northbound(10.0)], {"H1"}, factors(key=TOTAL), G)
        assert grid.total_reduction == pytest.approx(94.0)

    def test_midpoint_assignment(self):
        # one segment straddling a cell edge goes wholly to its midpoint's cell
        a = rec(local_ts(10), lat=30.0 + 150 / 110540, lon=104.0005)
        b = rec(local_ts(10) + 10, lat=30.0 + 300 / 110540, lon=104.0005)
        trip = Trip("H1", [a, b], 0.0, 0.0, "t", [0.0, 0.0], [False, False])
        grid = accumulate([trip], {"H1"}, factors(), G)
        assert [k[:2] for k in grid.cells] == [(0, 1)]

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.2, 8), st.integers(0, 23), st.booleans()), min_size=1, max_size=6))
    def test_conservation(self, spec):
        trips = [northbound(km, n_seg=7, t0=local_ts(h), vid=f"{'H' if he else 'N'}{i}", lat0=30 + 0.01 * i)
                 for i, (km, h, he) in enumerate(spec)]
        flagged = {t.vehicle_id for t in trips if t.vehicle_id.startswith("H")}
        grid = accumulate(trips, flagged, factors(), G)
        cells = grid.cells.values()
        assert math.fsum(c.reduction for c in cells) == pytest.approx(grid.total_reduction, rel=1e-9, abs=1e-9)
        he_km = sum(km for km, _, he in spec if he)
        assert math.fsum(c.distance_he for c in cells) == pytest.approx(he_km, rel=1e-9)
        assert grid.total_reduction == pytest.approx(9.4 * he_km, rel=1e-9)
        day = sum(c.reduction for c in cells if c.period is Period.DAY)
        night = sum(c.reduction for c in cells if c.period is Period.NIGHT)
        assert day + night == pytest.approx(grid.total_reduction, rel=1e-9, abs=1e-9)

    def test_merge_matches_single_pass(self):
        trips = [northbound(3.0), northbound(4.0, vid="N1", t0=local_ts(21)), northbound(2.0, vid="H2", lat0=30.02)]
        flagged = {"H1", "H2"}
        whole = accumulate(trips, flagged, factors(), G)
        merged = accumulate(trips[:1], flagged, factors(), G).merge(accumulate(trips[1:], flagged, factors(), G))
        a, b = merged.summary(), whole.summary()
        for k in ("reduction_g", "counterfactual_g", "distance_km"):
            assert a[k] == pytest.approx(b[k])
        assert (a["n_cells"], a["vehicles"], a["flagged_vehicles"]) == (b["n_cells"], b["vehicles"], b["flagged_vehicles"])
        for key, c in whole.cells.items():
            assert merged.cells[key].reduction == pytest.approx(c.reduction)

    def test_summary(self):
        s = accumulate([northbound(10.0)], {"H1"}, factors(), G).summary()
        assert s["reduction_g"]["Total"] == pytest.approx(94.0)
        assert s["reduction_per_flagged_vehicle_g"] == pytest.approx(94.0)
        assert ReductionGrid().summary()["relative_savings"] == 0.0


class TestExport:
    def test_empty(self):
        doc = export_geojson([], G)
        assert doc["type"] == "FeatureCollection" and doc["features"] == []

    def test_one_cell(self):
        grid = accumulate([northbound(0.1)], {"H1"}, factors(), G)
        (feature,) = export_geojson(grid.cells.values(), G)["features"]
        ring = feature["geometry"]["coordinates"][0]
        assert ring[0] == ring[-1] and len(ring) == 5
        # [lon, lat] order
        assert all(100 < pt[0] < 110 and 25 < pt[1] < 35 for pt in ring)
        assert feature["properties"]["reduction_g"] == pytest.approx(0.94)

    def test_round_trip(self, tmp_path):
        grid = accumulate([northbound(3.0), northbound(2.0, t0=local_ts(23))], {"H1"}, factors(), G)
        export_geojson(grid.cells.values(), G, tmp_path / "m.geojson")
        back = read_geojson(tmp_path / "m.geojson")
        assert sorted((c.ix, c.iy, c.period, c.reduction) for c in back) == \
            sorted((c.ix, c.iy, c.period, c.reduction) for c in grid.cells.values())
        write_cells_csv(grid.cells.values(), tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert len(lines) == len(grid.cells) + 1
