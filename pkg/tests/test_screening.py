from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noxscreen.binning import OperatingBin, SpeedClass
from noxscreen.errors import UnscreenableBin
from noxscreen.ingest import FuelType
from noxscreen.profiling import BinProfile, derive_thresholds
from noxscreen.screening import (
    Disposition,
    Exceedance,
    Method,
    VehicleState,
    evaluate_pass_national,
    evaluate_pass_obm_rsd,
    fleet_screening_report,
    read_verdicts_csv,
    screen_passes,
    update_vehicle_state,
    write_dispositions_csv,
    write_verdicts_csv,
)

from conftest import rsd_pass
from oracles import DAY

# at 50 km/h, 0.3 m/s^2 lands in Bin27, 0.6 in Bin28 and 0.0 in Bin25


def table(mean=0.004, multiplier=2.0):
    profs = {b: BinProfile(b, 500, mean, mean, mean, mean, 20.0, 40.0, 1 / 22, 0.0, 5) for b in OperatingBin}
    return derive_thresholds(profs, multiplier)


def q3_for(ratio):
    return ratio * 0.6


def medium_pass(ts, ratio, vid="V1", accel=0.6):
    return rsd_pass(vid, ts, speed=50.0, accel=accel, q3_raw=q3_for(ratio))


def exc(ts, sr=SpeedClass.MEDIUM, vid="V1", method=Method.OBM_RSD):
    b = OperatingBin.BIN28 if sr is SpeedClass.MEDIUM else OperatingBin.BIN38
    if method is Method.NATIONAL:
        return Exceedance(vid, ts, method, None, None, 1600.0, 1500.0)
    return Exceedance(vid, ts, method, sr, b, 0.012, 0.008)


class TestNational:
    @pytest.mark.parametrize("no_ppm,hit", [(1600, True), (1500, False), (200, False)])
    def test_limit(self, no_ppm, hit):
        assert (evaluate_pass_national(rsd_pass(no_ppm=no_ppm)) is not None) is hit

    def test_diesel_only(self):
        with pytest.raises(ValueError):
            evaluate_pass_national(rsd_pass(no_ppm=2000, fuel_type=FuelType.OTHER))


class TestObmRsdPass:
    def test_exceeds_in_medium(self):
        t = table()
        p = rsd_pass(speed=50.0, accel=0.3, q3_raw=q3_for(0.012))
        e = evaluate_pass_obm_rsd(p, t)
        assert e is not None and e.speed_range is SpeedClass.MEDIUM
        assert e.observed == pytest.approx(0.012) and e.threshold == pytest.approx(0.008)

    def test_compliant(self):
        assert evaluate_pass_obm_rsd(rsd_pass(speed=50.0, accel=0.3, q3_raw=q3_for(0.005)), table()) is None

    def test_at_threshold_is_compliant(self):
        t = table(mean=0.005)
        assert evaluate_pass_obm_rsd(rsd_pass(speed=50.0, accel=0.3, q3_raw=0.006), t) is None

    def test_idle(self):
        with pytest.raises(UnscreenableBin) as info:
            evaluate_pass_obm_rsd(rsd_pass(speed=0.5, accel=0.0), table())
        assert info.value.bin is OperatingBin.BIN1

    def test_braking(self):
        with pytest.raises(UnscreenableBin):
            evaluate_pass_obm_rsd(rsd_pass(speed=50.0, accel=-1.5), table())

    def test_exceedance_invariant(self):
        with pytest.raises(ValueError):
            Exceedance("V1", 0.0, Method.OBM_RSD, SpeedClass.MEDIUM, OperatingBin.BIN28, 0.008, 0.008)


class TestLedger:
    def state(self, method=Method.OBM_RSD):
        return VehicleState("V1", method)

    def test_two_within_window(self):
        s = self.state()
        update_vehicle_state(s, exc(0.0))
        v = update_vehicle_state(s, exc(100 * DAY))
        assert v.flagged and len(v.supporting) == 2 and v.speed_range is SpeedClass.MEDIUM

    def test_one(self):
        assert not update_vehicle_state(self.state(), exc(0.0)).flagged

    def test_seven_months(self):
        s = self.state()
        update_vehicle_state(s, exc(0.0))
        assert not update_vehicle_state(s, exc(213 * DAY)).flagged

    def test_window_inclusive(self):
        s = self.state()
        update_vehicle_state(s, exc(0.0))
        assert update_vehicle_state(s, exc(183 * DAY)).flagged

    def test_ranges_must_match(self):
        s = self.state()
        update_vehicle_state(s, exc(0.0, SpeedClass.MEDIUM))
        assert not update_vehicle_state(s, exc(10 * DAY, SpeedClass.HIGH)).flagged

    def test_national_ignores_ranges(self):
        s = self.state(Method.NATIONAL)
        update_vehicle_state(s, exc(0.0, method=Method.NATIONAL))
        assert update_vehicle_state(s, exc(10 * DAY, method=Method.NATIONAL)).flagged

    def test_duplicate_is_idempotent(self):
        s = self.state()
        update_vehicle_state(s, exc(5.0))
        v = update_vehicle_state(s, exc(5.0))
        assert not v.flagged and v.n_exceedances == 1

    def test_wrong_ledger(self):
        with pytest.raises(ValueError):
            update_vehicle_state(self.state(), exc(0.0, vid="V2"))


class TestScreenPasses:
    def passes(self):
        out = []
        # V1: two medium exceedances 30 days apart
        out += [medium_pass(0, 0.012, "V1"), medium_pass(30 * DAY, 0.013, "V1")]
        # V2: compliant
        out += [medium_pass(0, 0.004, "V2"), medium_pass(DAY, 0.005, "V2")]
        # V3: one exceedance plus an idle pass
        out += [medium_pass(0, 0.02, "V3"), rsd_pass("V3", DAY, speed=0.5)]
        # V4: national exceedances only
        out += [rsd_pass("V4", 0, speed=50.0, accel=0.6, no_ppm=1700, q3_raw=q3_for(0.004)),
                rsd_pass("V4", DAY, speed=50.0, accel=0.6, no_ppm=1800, q3_raw=q3_for(0.004))]
        return out

    def test_methods_independent(self):
        r = screen_passes(self.passes(), thresholds=table())
        assert r.flagged(Method.OBM_RSD) == {"V1"}
        assert r.flagged(Method.NATIONAL) == {"V4"}

    def test_unscreenable_logged(self):
        r = screen_passes(self.passes(), [Method.OBM_RSD], table())
        disp = [d for d in r.dispositions if d.vehicle_id == "V3"]
        assert [d.disposition for d in disp] == [Disposition.EXCEED, Disposition.UNSCREENABLE]

    def test_national_limit_override(self):
        r = screen_passes(self.passes(), [Method.NATIONAL], national_limit=1750)
        assert r.flagged(Method.NATIONAL) == set()

    def test_needs_thresholds(self):
        with pytest.raises(ValueError):
            screen_passes(self.passes(), [Method.OBM_RSD])

    def test_order_independent(self):
        base = screen_passes(self.passes(), thresholds=table())
        shuffled = self.passes()
        random.Random(3).shuffle(shuffled)
        again = screen_passes(shuffled, thresholds=table())
        assert base.verdicts == again.verdicts

    def test_bin_granularity(self):
        # same medium range but different bins
        ps = [medium_pass(0, 0.02, accel=0.6), medium_pass(DAY, 0.02, accel=0.0)]
        assert screen_passes(ps, [Method.OBM_RSD], table()).flagged(Method.OBM_RSD) == {"V1"}
        r = screen_passes(ps, [Method.OBM_RSD], table(), granularity="bin")
        assert r.flagged(Method.OBM_RSD) == set()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 400), st.floats(0.001, 0.03)), min_size=1, max_size=12),
           st.floats(1.0, 4.0), st.floats(1.0, 2.0))
    def test_threshold_monotone(self, events, mult, factor):
        ps = [medium_pass(d * DAY, r, vid=f"V{i % 3}") for i, (d, r) in enumerate(events)]
        low = screen_passes(ps, [Method.OBM_RSD], table(multiplier=mult)).flagged(Method.OBM_RSD)
        high = screen_passes(ps, [Method.OBM_RSD], table(multiplier=mult * factor)).flagged(Method.OBM_RSD)
        assert high <= low


class TestReport:
    def test_flag_rate(self):
        verdicts = {Method.NATIONAL: {}}
        from noxscreen.screening import ScreeningVerdict

        for i in range(956):
            verdicts[Method.NATIONAL][f"V{i}"] = ScreeningVerdict(f"V{i}", Method.NATIONAL, i < 18)
        rep = fleet_screening_report(verdicts)
        assert rep["National"]["flagged"] == 18
        assert round(rep["National"]["flagged_pct"], 1) == 1.9

    def test_empty(self):
        assert fleet_screening_report({}) == {}

    def test_sparse_range(self):
        passes = [medium_pass(0, 0.004, f"V{i}") for i in range(12)]
        passes += [rsd_pass("V0", 1, speed=20.0, accel=0.1, q3_raw=q3_for(0.004))]
        r = screen_passes(passes, [Method.OBM_RSD], table())
        rep = fleet_screening_report(r.verdicts)["ObmRsd"]["per_speed_range"]
        assert rep["Medium"]["status"] == "ok" and rep["Medium"]["flagged_pct"] == 0.0
        assert rep["Low"]["status"] == "insufficient data" and rep["Low"]["flagged_pct"] is None


def test_verdict_csv_round_trip(tmp_path):
    r = screen_passes(TestScreenPasses().passes(), thresholds=table())
    write_verdicts_csv(r.verdicts, tmp_path / "v.csv")
    write_dispositions_csv(r.dispositions, tmp_path / "d.csv")
    back = read_verdicts_csv(tmp_path / "v.csv")
    for m in r.verdicts:
        for vid, v in r.verdicts[m].items():
            b = back[m][vid]
            assert (b.flagged, b.n_exceedances, b.first_ts, b.last_ts) == (v.flagged, v.n_exceedances, v.first_ts, v.last_ts)
    header = (tmp_path / "v.csv").read_text().splitlines()[0]
    assert header == "vehicle_id,method,flagged,n_exceedances,first_ts,last_ts,speed_range"
