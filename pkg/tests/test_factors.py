from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from noxscreen.errors import NonPositiveFC
from noxscreen.factors import (
    TOTAL,
    Cohort,
    cohort_factors,
    distance_specific_ef,
    fuel_specific_ef,
    range_keys,
    read_factors_csv,
    write_factors_csv,
)
from noxscreen.screening import Method, ScreeningVerdict

from conftest import rsd_pass
from oracles import distance_ef_exact, fuel_ef_exact

ratio = st.floats(0, 0.2, allow_nan=False)


def verdicts(flagged, others=()):
    out = {v: ScreeningVerdict(v, Method.OBM_RSD, True) for v in flagged}
    out.update({v: ScreeningVerdict(v, Method.OBM_RSD, False) for v in others})
    return out


class TestFuelSpecific:
    @pytest.mark.parametrize("q,printed,places", [((0, 0, 0.00667), 14.3405, 4), ((0.05, 0.001, 0.008), 16.288, 3)])
    def test_examples(self, q, printed, places):
        assert fuel_specific_ef(*q) == pytest.approx(float(fuel_ef_exact(*q)), rel=1e-12)
        assert round(fuel_specific_ef(*q), places) == printed

    def test_zero(self):
        assert fuel_specific_ef(0.05, 0.001, 0.0) == 0

    @given(ratio, ratio, ratio, st.floats(0, 10))
    def test_linear_in_q3(self, q1, q2, q3, k):
        assert fuel_specific_ef(q1, q2, k * q3) == pytest.approx(k * fuel_specific_ef(q1, q2, q3), rel=1e-9, abs=1e-12)

    @given(ratio, ratio, st.floats(0.001, 0.1), st.floats(0.001, 0.1))
    def test_decreasing_in_co_and_hc(self, q1, q2, q3, d):
        assert fuel_specific_ef(q1 + d, q2, q3) < fuel_specific_ef(q1, q2, q3)
        assert fuel_specific_ef(q1, q2 + d, q3) < fuel_specific_ef(q1, q2, q3)


class TestDistanceSpecific:
    def test_example(self):
        assert distance_specific_ef(14.34, 0.515) == pytest.approx(float(distance_ef_exact("14.34", "0.515")), rel=1e-12)
        assert round(distance_specific_ef(14.34, 0.515), 6) == 6.277335

    @pytest.mark.parametrize("fc", [0.0, -0.1])
    def test_non_positive_fc(self, fc):
        with pytest.raises(NonPositiveFC):
            distance_specific_ef(14.34, fc)

    def test_fuel_factor_inversion(self):
        assert round(distance_specific_ef(37.46, 0.515), 1) == 16.4

    @given(st.floats(0, 100), st.floats(0.01, 2), st.floats(0.1, 10))
    def test_bilinear(self, ef, fc, k):
        base = distance_specific_ef(ef, fc)
        assert distance_specific_ef(k * ef, fc) == pytest.approx(k * base, rel=1e-9, abs=1e-12)
        assert distance_specific_ef(ef, k * fc) == pytest.approx(k * base, rel=1e-9, abs=1e-12)


def medium(vid, q3_raw, ts=0.0, q1=0.0, q2=0.0):
    return rsd_pass(vid, ts, speed=45.0, accel=0.0, q3_raw=q3_raw, q1=q1, q2=q2)


class TestCohortFactors:
    def test_published_medium_cell(self):
        # fuel-specific factors chosen so that 0.515 L/km gives 4.8 and 14.2 g/km
        fc = 0.515
        q3 = {gkm: gkm / (fc * 0.85) * 12 / (30 * 860) for gkm in (4.8, 14.2)}
        passes = [medium("N1", q3[4.8] * 0.6), medium("H1", q3[14.2] * 0.6)]
        t = cohort_factors(passes, verdicts(["H1"], ["N1"]), fc)
        assert t.factor(Cohort.NBV, "Medium").ef_distance == pytest.approx(4.8, rel=1e-12)
        assert t.factor(Cohort.HE, "Medium").ef_distance == pytest.approx(14.2, rel=1e-12)
        assert t.delta("Medium") == pytest.approx(9.4, rel=1e-12)

    def test_planted_ratio(self):
        rng = random.Random(5)
        passes = []
        for i in range(200):
            he = i < 20
            base = 0.003 * (3 if he else 1)
            passes.append(medium(f"{'H' if he else 'N'}{i}", base * 0.6 * rng.lognormvariate(-0.02, 0.2),
                                 q1=0.02, q2=0.0005))
        v = verdicts([p.vehicle_id for p in passes if p.vehicle_id.startswith("H")],
                     [p.vehicle_id for p in passes if p.vehicle_id.startswith("N")])
        t = cohort_factors(passes, v, 0.5)
        ratio_he = t.factor(Cohort.HE, "Medium").ef_distance / t.factor(Cohort.NBV, "Medium").ef_distance
        assert ratio_he == pytest.approx(3.0, rel=0.05)

    def test_empty_cell_is_absent(self):
        t = cohort_factors([medium("N1", 0.003)], verdicts([], ["N1"]), 0.5)
        assert t.factor(Cohort.HE, "Medium") is None and t.delta("Medium") is None
        assert (Cohort.HE, "High") in t.empty_cells(range_keys())

    def test_skips_braking_and_idle(self):
        ps = [rsd_pass("N1", 0, speed=0.5), rsd_pass("N1", 1, speed=50, accel=-2.0)]
        assert cohort_factors(ps, verdicts([], ["N1"]), 0.5) == {}

    def test_unknown_vehicle(self):
        with pytest.raises(KeyError):
            cohort_factors([medium("X", 0.003)], {}, 0.5)

    def test_total_grouping(self):
        ps = [medium("N1", 0.003), rsd_pass("N1", 5, speed=80, q3_raw=0.006)]
        t = cohort_factors(ps, verdicts([], ["N1"]), 0.5, grouping="total")
        assert list(t) == [(Cohort.NBV, TOTAL)]
        assert t[(Cohort.NBV, TOTAL)].mean_q3 == pytest.approx((0.005 + 0.01) / 2)

    def test_per_range_fc(self):
        ps = [medium("N1", 0.003), rsd_pass("N1", 5, speed=80, q3_raw=0.003, q1=0.0, q2=0.0)]
        t = cohort_factors(ps, verdicts([], ["N1"]), 0.5, fc_by_range={"High": 0.25})
        assert t.factor(Cohort.NBV, "High").ef_distance == pytest.approx(t.factor(Cohort.NBV, "Medium").ef_distance / 2)

    def test_conventions_differ_on_heterogeneous_cells(self):
        ps = [medium("N1", 0.003, q1=0.0), medium("N2", 0.006, q1=0.5)]
        v = verdicts([], ["N1", "N2"])
        a = cohort_factors(ps, v, 0.5).factor(Cohort.NBV, "Medium").ef_fuel
        b = cohort_factors(ps, v, 0.5, convention="per_pass").factor(Cohort.NBV, "Medium").ef_fuel
        expected_b = (fuel_ef_exact(0, 0, 0.005) + fuel_ef_exact("0.5", 0, 0.01)) / 2
        assert b == pytest.approx(float(expected_b), rel=1e-12)
        assert a == pytest.approx(float(fuel_ef_exact("0.25", 0, "0.0075")), rel=1e-12)
        assert a != pytest.approx(b)

    @given(st.lists(st.floats(0.0005, 0.02), min_size=2, max_size=20), st.integers(1, 19))
    def test_split_associative(self, q3s, cut):
        # cell mean over all passes equals the pass-weighted mean of two sub-batches
        cut = min(cut, len(q3s) - 1)
        ps = [medium(f"N{i}", q) for i, q in enumerate(q3s)]
        v = verdicts([], [p.vehicle_id for p in ps])
        whole = cohort_factors(ps, v, 0.5).factor(Cohort.NBV, "Medium")
        a = cohort_factors(ps[:cut], v, 0.5).factor(Cohort.NBV, "Medium")
        b = cohort_factors(ps[cut:], v, 0.5).factor(Cohort.NBV, "Medium")
        pooled = (a.mean_q3 * a.n_passes + b.mean_q3 * b.n_passes) / (a.n_passes + b.n_passes)
        assert whole.mean_q3 == pytest.approx(pooled, rel=1e-9)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            cohort_factors([], {}, 0.5, grouping="bin")
        with pytest.raises(ValueError):
            cohort_factors([], {}, 0.5, convention="median")


def test_csv_round_trip(tmp_path):
    ps = [medium("N1", 0.003), medium("H1", 0.009), rsd_pass("N1", 9, speed=80, q3_raw=0.004)]
    t = cohort_factors(ps, verdicts(["H1"], ["N1"]), 0.515)
    path = tmp_path / "factors.csv"
    write_factors_csv({Method.OBM_RSD: t}, path)
    back = read_factors_csv(path)
    assert set(back) == set(t)
    for key, ef in t.items():
        assert back[key].ef_distance == ef.ef_distance and back[key].ef_fuel == ef.ef_fuel
    assert read_factors_csv(path, Method.NATIONAL) == {}


def test_csv_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_factors_csv(p)
