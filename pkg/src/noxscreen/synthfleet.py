"""Synthetic OBM trips and RSD passes with planted high-emitters.

The generator writes the same CSV schemas that :mod:`noxscreen.ingest`
reads, plus a JSON manifest with the ground truth: which vehicles are
high-emitters, per-bin mean ratios, total fuel and distance, per-range
travel by cohort and the analytic reduction potential.

Kinematics are defined on the sampled trace: speed is piecewise linear
between samples (trapezoid distance) and the acceleration of a sample is
the slope of the trace around it.  Fuel is integrated with a zero-order hold.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping

import numpy as np

from .binning import (
    DEFAULT_VSP,
    SCREENABLE_RANGES,
    OperatingBin,
    SpeedClass,
    VspParams,
    classify,
    speed_range,
    vsp,
)
from .emissions import DEFAULT_FUEL, FuelConstants
from .errors import InvalidSpec
from .factors import DEFAULT_EF, fuel_specific_ef
from .ingest import GAP_INTERVAL_S, MAX_GAP_FRACTION, MIN_TRIP_DURATION_S, OBM_COLUMNS, RSD_COLUMNS
from .reduction_map import EARTH_RADIUS_KM, resolve_tz

MANIFEST_FORMAT = "noxscreen-manifest v1"

# NBV NOx/CO2 by bin: flat-ish at low speed, falling with VSP at medium and high speed.
DEFAULT_BASE_RATIOS = {
    0: 0.0060, 1: 0.0070,
    11: 0.0055, 12: 0.0050, 13: 0.0058, 14: 0.0052, 15: 0.0056, 16: 0.0050,
    21: 0.0075, 22: 0.0068, 23: 0.0062, 24: 0.0056, 25: 0.0050, 26: 0.0045, 27: 0.0041, 28: 0.0038,
    33: 0.0060, 34: 0.0052, 35: 0.0046, 36: 0.0042, 37: 0.0039, 38: 0.0036,
}

DEFAULT_NOISE = {"ratio": 0.2, "rsd": 0.2, "fuel": 0.03, "gas": 0.1}


@dataclass
class DriveCycle:
    """Markov drive-cycle parameters.  Speeds in km/h, accelerations in m/s^2."""

    trip_minutes: float = 32.0
    cadence_s: float = 10.0
    v_max_kmh: float = 90.0
    target_kmh: tuple[float, float] = (15.0, 88.0)
    accel_levels: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    decel_levels: tuple[float, ...] = (-0.3, -0.5, -0.7, -1.0, -1.3)
    cruise_jitter: float = 0.15
    idle_steps: tuple[int, int] = (3, 12)
    cruise_steps: tuple[int, int] = (3, 15)
    stop_probability: float = 0.3


@dataclass
class FleetSpec:
    n_vehicles: int = 100
    he_fraction: float = 0.07
    he_ratio_multiplier: float = 3.0
    drive_cycle: DriveCycle = field(default_factory=DriveCycle)
    noise: dict = field(default_factory=lambda: dict(DEFAULT_NOISE))
    seed: int = 0
    dropout: float = 0.0
    city_box: tuple[float, float, float, float] = (30.55, 30.80, 103.90, 104.20)
    trips_per_vehicle: int = 2
    passes_per_vehicle: int = 6
    n_sites: int = 2
    rsd_min_speed_kmh: float = 20.0
    days: int = 60
    start_date: str = "2022-05-01"
    timezone: str = "Asia/Shanghai"
    base_ratios: dict = field(default_factory=lambda: dict(DEFAULT_BASE_RATIOS))
    q1_mean: float = 0.02
    q2_mean: float = 0.0005
    co2_ppm: tuple[float, float] = (50000.0, 150000.0)
    corrupt_rows: int = 0
    non_target_passes: int = 0

    def validate(self) -> None:
        def bad(msg):
            raise InvalidSpec(msg)

        if self.n_vehicles < 1:
            bad("n_vehicles must be >= 1")
        if not 0 <= self.he_fraction <= 1:
            bad("he_fraction must lie in [0, 1]")
        if not self.he_ratio_multiplier >= 1:
            bad("he_ratio_multiplier must be >= 1")
        if not 0 <= self.dropout < 1:
            bad("dropout must lie in [0, 1)")
        if self.noise.get("fuel", 0) <= 0:
            bad("noise.fuel must be > 0, otherwise idle fuel readings freeze")
        if min(self.noise.get(k, 0) for k in DEFAULT_NOISE) < 0:
            bad("noise levels must be >= 0")
        if self.trips_per_vehicle < 1 or self.trips_per_vehicle > self.days:
            bad("trips_per_vehicle must lie in [1, days]")
        if self.passes_per_vehicle < 0 or self.n_sites < 1:
            bad("passes_per_vehicle must be >= 0 and n_sites >= 1")
        lat0, lat1, lon0, lon1 = self.city_box
        if not (-90 < lat0 < lat1 < 90 and -180 < lon0 < lon1 < 180):
            bad("city_box must be (lat_min, lat_max, lon_min, lon_max)")
        if self.drive_cycle.trip_minutes * 60 < MIN_TRIP_DURATION_S:
            bad("trip_minutes below the 30 minute trip minimum")
        missing = {int(b) for b in OperatingBin} - {int(k) for k in self.base_ratios}
        if missing:
            bad(f"base_ratios missing bins {sorted(missing)}")
        if self.corrupt_rows < 0 or self.non_target_passes < 0:
            bad("corrupt_rows and non_target_passes must be >= 0")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "FleetSpec":
        data = dict(data)
        data.pop("format", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidSpec(f"unknown spec keys {sorted(unknown)}")
        if "drive_cycle" in data:
            dc = dict(data["drive_cycle"])
            bad = set(dc) - set(DriveCycle.__dataclass_fields__)
            if bad:
                raise InvalidSpec(f"unknown drive_cycle keys {sorted(bad)}")
            data["drive_cycle"] = DriveCycle(**{k: tuple(v) if isinstance(v, list) else v for k, v in dc.items()})
        if "noise" in data:
            data["noise"] = {**DEFAULT_NOISE, **data["noise"]}
        if "base_ratios" in data:
            data["base_ratios"] = {int(str(k).lower().removeprefix("bin")): float(v) for k, v in data["base_ratios"].items()}
        for key in ("city_box", "co2_ppm"):
            if key in data:
                data[key] = tuple(data[key])
        spec = cls(**data)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "FleetSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_json(self) -> dict:
        d = asdict(self)
        d["base_ratios"] = {str(k): v for k, v in sorted(self.base_ratios.items())}
        return d


# ------------------------------------------------------------------ kinematics


def _drive_trace(rng: np.random.Generator, dc: DriveCycle) -> np.ndarray:
    """Sampled speed trace in m/s starting and ending at rest."""
    dt = dc.cadence_s
    v_max = dc.v_max_kmh / 3.6
    n_target = int(math.ceil(dc.trip_minutes * 60 / dt)) + 1
    v = [0.0] * int(rng.integers(dc.idle_steps[0], dc.idle_steps[1] + 1))

    def ramp(target: float, a: float):
        while (a > 0 and v[-1] < target) or (a < 0 and v[-1] > target):
            nxt = v[-1] + a * dt
            v.append(min(nxt, target, v_max) if a > 0 else max(nxt, target, 0.0))

    while len(v) < n_target:
        target = rng.uniform(*dc.target_kmh) / 3.6
        if target > v[-1]:
            ramp(target, float(rng.choice(dc.accel_levels)))
        else:
            ramp(target, float(rng.choice(dc.decel_levels)))
        for _ in range(int(rng.integers(dc.cruise_steps[0], dc.cruise_steps[1] + 1))):
            jitter = rng.uniform(-dc.cruise_jitter, dc.cruise_jitter)
            v.append(min(max(v[-1] + jitter * dt, 0.5), v_max))
        if rng.random() < dc.stop_probability:
            ramp(0.0, float(rng.choice(dc.decel_levels)))
            v.extend([0.0] * int(rng.integers(dc.idle_steps[0], dc.idle_steps[1] + 1)))
    if v[-1] > 0:
        ramp(0.0, -0.5)
    v.extend([0.0, 0.0])
    return np.asarray(v, dtype=float)


def _destination(lat: float, lon: float, bearing: float, dist_m: float) -> tuple[float, float]:
    """Great-circle destination on the haversine sphere."""
    delta = dist_m / (EARTH_RADIUS_KM * 1000.0)
    p1, l1 = math.radians(lat), math.radians(lon)
    p2 = math.asin(math.sin(p1) * math.cos(delta) + math.cos(p1) * math.sin(delta) * math.cos(bearing))
    l2 = l1 + math.atan2(math.sin(bearing) * math.sin(delta) * math.cos(p1), math.cos(delta) - math.sin(p1) * math.sin(p2))
    return math.degrees(p2), math.degrees(l2)


def _fuel_rate(vsp_value: float) -> float:
    """Nominal fuel rate in L/h of a ~25 t truck at a given VSP."""
    return 3.0 + 6.25 * max(vsp_value, 0.0)


def _lognormal(rng: np.random.Generator, sigma: float, size=None):
    """Mean-one lognormal multiplier."""
    if sigma <= 0:
        return np.ones(size) if size is not None else 1.0
    return rng.lognormal(-0.5 * sigma * sigma, sigma, size)


# ------------------------------------------------------------------ generation


@dataclass
class _TripData:
    t: np.ndarray
    v: np.ndarray
    accel: np.ndarray
    bins: list
    seg_m: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    q_fr: np.ndarray
    q_maf: np.ndarray
    ratio: np.ndarray
    keep: np.ndarray


def _start_epoch(spec: FleetSpec) -> float:
    tz = resolve_tz(spec.timezone)
    return datetime.fromisoformat(spec.start_date).replace(tzinfo=tz).timestamp()


def _make_trip(rng, spec: FleetSpec, start_ts: int, mult: float, vp: VspParams) -> _TripData:
    dc = spec.drive_cycle
    v = _drive_trace(rng, dc)
    n = len(v)
    t = start_ts + dc.cadence_s * np.arange(n)
    accel = np.gradient(v, t)
    vsps = [vsp(float(vi), float(ai), vp) for vi, ai in zip(v, accel)]
    bins = [classify(float(vi) * 3.6, float(ai), s) for vi, ai, s in zip(v, accel, vsps)]
    seg_m = 0.5 * (v[:-1] + v[1:]) * np.diff(t)

    lat0, lat1, lon0, lon1 = spec.city_box
    lat = np.empty(n)
    lon = np.empty(n)
    lat[0] = rng.uniform(lat0, lat1)
    lon[0] = rng.uniform(lon0, lon1)
    heading = rng.uniform(0, 2 * math.pi)
    turns = rng.normal(0.0, 0.15, n)
    for i in range(n - 1):
        heading += turns[i]
        la, lo = _destination(lat[i], lon[i], heading, seg_m[i])
        if not (lat0 <= la <= lat1 and lon0 <= lo <= lon1):
            heading += math.pi
            la, lo = _destination(lat[i], lon[i], heading, seg_m[i])
        lat[i + 1], lon[i + 1] = la, lo

    noise = spec.noise
    q_fr = np.array([_fuel_rate(s) for s in vsps]) * _lognormal(rng, noise["fuel"], n)
    q_fr = np.clip(q_fr, 0.5, 180.0)
    q_maf = (150.0 + 12.0 * q_fr) * _lognormal(rng, noise["fuel"], n)
    base = np.array([spec.base_ratios[int(b)] for b in bins])
    ratio = base * mult * _lognormal(rng, noise["ratio"], n)
    keep = np.ones(n, dtype=bool)
    if spec.dropout > 0 and n > 2:
        keep[1:-1] = rng.random(n - 2) >= spec.dropout
    return _TripData(t, v, accel, bins, seg_m, lat, lon, q_fr, q_maf, ratio, keep)


def _nox_ppm(ratio: np.ndarray, q_fr: np.ndarray, q_maf: np.ndarray, c: FuelConstants) -> np.ndarray:
    """NOx concentration that reproduces ``ratio`` through the rate equations."""
    return ratio * q_fr * c.beta / (c.mu * (q_maf + q_fr * c.rho))


def generate(
    spec: FleetSpec,
    out_dir,
    c: FuelConstants = DEFAULT_FUEL,
    vp: VspParams = DEFAULT_VSP,
) -> dict:
    """Write ``obm/``, ``rsd/`` and ``manifest.json`` under ``out_dir``; return the manifest."""
    spec.validate()
    out = Path(out_dir)
    (out / "obm").mkdir(parents=True, exist_ok=True)
    (out / "rsd").mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_vehicles + 1)
    master = np.random.default_rng(seeds[-1])
    ids = [f"V{i:04d}" for i in range(spec.n_vehicles)]
    n_he = int(round(spec.n_vehicles * spec.he_fraction))
    he_ids = sorted(ids[i] for i in master.permutation(spec.n_vehicles)[:n_he])
    he_set = set(he_ids)
    t0 = _start_epoch(spec)
    sites = [f"RSD-{k + 1}" for k in range(spec.n_sites)]
    m = spec.he_ratio_multiplier

    bin_n = {b: [0, 0] for b in OperatingBin}  # [nbv, he] sample counts
    dist_by_range = {"NBV": {sc.value: 0.0 for sc in SpeedClass}, "HE": {sc.value: 0.0 for sc in SpeedClass}}
    total_fuel_l = total_dist_km = 0.0
    trips_meta = []
    passes = []  # (sort key, row)
    pass_base = {"NBV": {}, "HE": {}}
    obm_rows_total = 0
    obm_paths = []

    for idx, vid in enumerate(ids):
        rng = np.random.default_rng(seeds[idx])
        cohort = "HE" if vid in he_set else "NBV"
        mult = m if cohort == "HE" else 1.0
        days = np.sort(rng.choice(spec.days, spec.trips_per_vehicle, replace=False))
        trips = []
        for d in days:
            start = int(t0 + d * 86400 + int(rng.integers(0, 86400)))
            trips.append(_make_trip(rng, spec, start, mult, vp))

        path = out / "obm" / f"obm_{vid}.csv"
        obm_paths.append(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OBM_COLUMNS.values())
            for tr in trips:
                nox = _nox_ppm(tr.ratio, tr.q_fr, tr.q_maf, c)
                tank = 80.0 - 0.01 * np.arange(len(tr.t))
                for i in np.flatnonzero(tr.keep):
                    scr = 180.0 + 120.0 * float(tr.v[i]) / 25.0
                    w.writerow([vid, int(tr.t[i]), repr(float(tr.v[i] * 3.6)), repr(float(nox[i])),
                                repr(float(tr.q_maf[i])), repr(float(tr.q_fr[i])), repr(float(tr.lat[i])),
                                repr(float(tr.lon[i])), repr(round(scr, 3)), repr(round(float(tank[i]), 3))])
                    bin_n[tr.bins[i]][cohort == "HE"] += 1
                kept_t = tr.t[tr.keep]
                n_kept = len(kept_t)
                obm_rows_total += n_kept
                gaps = int(np.sum(np.diff(kept_t) > GAP_INTERVAL_S))
                gap_fraction = gaps / (n_kept - 1)
                duration = float(kept_t[-1] - kept_t[0])
                trips_meta.append({
                    "vehicle_id": vid,
                    "start": int(kept_t[0]),
                    "n_records": n_kept,
                    "gap_fraction": gap_fraction,
                    "expected_accept": duration >= MIN_TRIP_DURATION_S and gap_fraction <= MAX_GAP_FRACTION,
                })
                total_fuel_l += float(np.sum(tr.q_fr[:-1] * np.diff(tr.t))) / 3600.0
                total_dist_km += float(np.sum(tr.seg_m)) / 1000.0
                for i, seg in enumerate(tr.seg_m):
                    dist_by_range[cohort][speed_range(tr.bins[i]).value] += float(seg) / 1000.0

        # RSD passes sampled from moving, non-braking instants of this vehicle's trips
        candidates = [(k, i) for k, tr in enumerate(trips) for i in range(len(tr.t))
                      if tr.v[i] * 3.6 >= spec.rsd_min_speed_kmh and speed_range(tr.bins[i]) in SCREENABLE_RANGES]
        n_pass = min(spec.passes_per_vehicle, len(candidates))
        chosen = sorted(rng.choice(len(candidates), n_pass, replace=False)) if n_pass else []
        for j in chosen:
            k, i = candidates[j]
            tr = trips[k]
            b = tr.bins[i]
            base = spec.base_ratios[int(b)]
            ratio = base * mult * float(_lognormal(rng, spec.noise["rsd"]))
            q3_raw = ratio * (1.0 - c.f_no2)
            co2 = rng.uniform(*spec.co2_ppm)
            q1 = spec.q1_mean * float(_lognormal(rng, spec.noise["gas"]))
            q2 = spec.q2_mean * float(_lognormal(rng, spec.noise["gas"]))
            site = sites[int(rng.integers(0, len(sites)))]
            sr = speed_range(b).value
            pass_base[cohort].setdefault(sr, []).append(base)
            passes.append(((site, int(tr.t[i]), vid), [
                vid, int(tr.t[i]), site, repr(float(tr.v[i] * 3.6)), repr(float(tr.accel[i])),
                repr(float(q3_raw * co2)), repr(q1), repr(q2), repr(q3_raw), "ChinaV", "Diesel",
            ]))

    extra = []
    if spec.non_target_passes:
        for k in range(spec.non_target_passes):
            vid = ids[int(master.integers(0, len(ids)))]
            fuel, std = ("Gasoline", "ChinaV") if k % 2 == 0 else ("Diesel", "ChinaVI")
            ts = int(t0 + master.integers(0, spec.days * 86400))
            extra.append(((sites[0], ts, vid), [vid, ts, sites[0], "50.0", "0.1", "2500.0", "0.02", "0.0005",
                                                "0.02", std, fuel]))
    all_passes = sorted(passes + extra, key=lambda p: p[0])
    for site in sites:
        with open(out / "rsd" / f"rsd_{site}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RSD_COLUMNS.values())
            for key, row in all_passes:
                if key[0] == site:
                    w.writerow(row)

    corrupted = _corrupt(master, spec.corrupt_rows, obm_paths, out)

    expected_mean = {}
    for b, (n_nbv, n_h) in bin_n.items():
        n = n_nbv + n_h
        expected_mean[b.label] = spec.base_ratios[int(b)] * (n_nbv + m * n_h) / n if n else None
    manifest = {
        "format": MANIFEST_FORMAT,
        "spec": spec.to_json(),
        "vehicle_ids": ids,
        "he_vehicle_ids": he_ids,
        "n_vehicles": spec.n_vehicles,
        "n_he": n_he,
        "base_ratios": {OperatingBin(int(k)).label: v for k, v in sorted(spec.base_ratios.items())},
        "expected_bin_mean": expected_mean,
        "obm_bin_counts": {b.label: {"NBV": v[0], "HE": v[1]} for b, v in bin_n.items()},
        "totals": {
            "fuel_l": total_fuel_l,
            "distance_km": total_dist_km,
            "fc_l_per_km": total_fuel_l / total_dist_km if total_dist_km else None,
        },
        "distance_km_by_range": dist_by_range,
        "rsd": {
            "n_passes": len(passes),
            "n_non_target": len(extra),
            "base_ratio_by_range": {
                coh: {sr: {"n": len(v), "mean": math.fsum(v) / len(v)} for sr, v in sorted(per.items())}
                for coh, per in pass_base.items()
            },
        },
        "obm_rows": obm_rows_total,
        "trips": trips_meta,
        "corrupted_rows": corrupted,
    }
    manifest["analytic"] = analytic_reduction(spec, manifest, c)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _corrupt(rng: np.random.Generator, k: int, paths: list, root: Path) -> list[dict]:
    """Replace the speed cell of ``k`` distinct data rows with a non-numeric token."""
    if k == 0:
        return []
    sizes = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            sizes.append(sum(1 for _ in fh) - 1)
    offsets = np.cumsum([0] + sizes)
    picks = sorted(int(x) for x in rng.choice(int(offsets[-1]), min(k, int(offsets[-1])), replace=False))
    by_file: dict[int, list[int]] = {}
    for g in picks:
        f = int(np.searchsorted(offsets, g, side="right") - 1)
        by_file.setdefault(f, []).append(g - int(offsets[f]) + 1)
    out = []
    for f, rows in sorted(by_file.items()):
        with open(paths[f], encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        for r in rows:
            cells = lines[r].split(",")
            cells[2] = "abc"
            lines[r] = ",".join(cells)
            out.append({"file": os.path.relpath(paths[f], root), "row": r})
        with open(paths[f], "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return out


# --------------------------------------------------------------------- oracle


def closed_form_savings(he_share: float, multiplier: float) -> float:
    """Relative savings when HE and NBV vehicles have identical activity."""
    return he_share * (multiplier - 1) / (he_share * multiplier + (1 - he_share))


def analytic_reduction(spec: FleetSpec, manifest: Mapping, c: FuelConstants = DEFAULT_FUEL) -> dict:
    """Expected reduction potential from the generator's own bookkeeping.

    The NBV distance factor of a speed range uses the noise-free mean base
    ratio of all passes sampled in that range; the HE factor is that times the
    multiplier.  Braking/idle travel and ranges without passes carry no
    factor, as in the gridded accumulation.
    """
    totals = manifest["totals"]
    fc = totals["fc_l_per_km"] or 0.0
    by_range = manifest["rsd"]["base_ratio_by_range"]
    dist = manifest["distance_km_by_range"]
    m = spec.he_ratio_multiplier
    reduction = baseline = 0.0
    per_range = {}
    for sc in SCREENABLE_RANGES:
        r = sc.value
        nbv_cell, he_cell = by_range["NBV"].get(r), by_range["HE"].get(r)
        cells = [x for x in (nbv_cell, he_cell) if x]
        if not cells or nbv_cell is None:
            continue
        q3 = math.fsum(x["mean"] * x["n"] for x in cells) / sum(x["n"] for x in cells)
        ef_nbv = fuel_specific_ef(spec.q1_mean, spec.q2_mean, q3, DEFAULT_EF) * fc * c.rho
        ef_he = m * ef_nbv
        d_nbv, d_he = dist["NBV"][r], dist["HE"][r]
        baseline += d_nbv * ef_nbv
        if he_cell is not None:
            baseline += d_he * ef_nbv
            reduction += d_he * max(0.0, ef_he - ef_nbv)
        per_range[r] = {"ef_nbv_gkm": ef_nbv, "ef_he_gkm": ef_he, "distance_he_km": d_he, "distance_nbv_km": d_nbv}
    current = reduction + baseline
    return {
        "reduction_g": reduction,
        "relative": reduction / current if current > 0 else 0.0,
        "closed_form_relative": closed_form_savings(spec.he_fraction, m),
        "per_range": per_range,
    }
