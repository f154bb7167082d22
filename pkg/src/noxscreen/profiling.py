"""Per-bin fleet statistics of NOx/CO2, high-emitter thresholds and fuel consumption.

Profiles are built by a mergeable fold over OBM records: partial
accumulators from different workers can be merged in any order before the
final statistics are taken.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .binning import (
    DEFAULT_VSP,
    OperatingBin,
    SpeedClass,
    VspParams,
    classify,
    speed_range,
    vsp_kmh,
)
from .emissions import DEFAULT_FUEL, FuelConstants, obm_ratio, rsd_ratio_from_q3
from .errors import EmptyInput, InsufficientData, ZeroDistance, ZeroFuelRate
from .ingest import GAP_INTERVAL_S, RsdPass, Trip, attach_acceleration

PROFILE_FORMAT = "noxscreen-profile v1"
THRESHOLD_FORMAT = "noxscreen-thresholds v1"

NAN = float("nan")


@dataclass(frozen=True)
class BinProfile:
    bin: OperatingBin
    n: int
    mean_ratio: float
    median_ratio: float
    p25: float
    p75: float
    mean_fuel_rate: float
    mean_speed: float
    time_fraction: float
    dwell_s: float = 0.0
    n_vehicles: int = 0


@dataclass
class _BinAcc:
    ratios: list = field(default_factory=list)
    dwell: float = 0.0
    fuel_dwell: float = 0.0
    speed_dwell: float = 0.0
    per_vehicle: dict = field(default_factory=lambda: defaultdict(lambda: [0.0, 0]))


class ProfileAccumulator:
    """Commutative, associative fold of OBM records into per-bin statistics."""

    def __init__(self, c: FuelConstants = DEFAULT_FUEL, p: VspParams = DEFAULT_VSP, dwell_cap: float = GAP_INTERVAL_S):
        self.c = c
        self.p = p
        self.dwell_cap = dwell_cap
        self.bins: dict[OperatingBin, _BinAcc] = {b: _BinAcc() for b in OperatingBin}

    def add(self, bin_id: OperatingBin, vehicle_id: str, ratio: float | None, fuel_rate: float, speed: float, dwell: float):
        acc = self.bins[bin_id]
        if ratio is not None:
            acc.ratios.append(ratio)
            pv = acc.per_vehicle[vehicle_id]
            pv[0] += ratio
            pv[1] += 1
        acc.dwell += dwell
        acc.fuel_dwell += fuel_rate * dwell
        acc.speed_dwell += speed * dwell

    def add_trip(self, trip: Trip) -> None:
        if trip.accel is None:
            attach_acceleration(trip)
        recs = trip.records
        n = len(recs)
        for i, (r, a) in enumerate(zip(recs, trip.accel)):
            if not r.valid or not math.isfinite(a):
                continue
            if i + 1 < n:
                dwell = recs[i + 1].timestamp - r.timestamp
            elif n > 1:
                dwell = r.timestamp - recs[i - 1].timestamp
            else:
                dwell = 0.0
            dwell = min(dwell, self.dwell_cap)
            b = classify(r.speed, a, vsp_kmh(r.speed, a, self.p))
            try:
                ratio = obm_ratio(r.nox_out, r.q_maf, r.q_fr, self.c)
            except ZeroFuelRate:
                ratio = None
            self.add(b, r.vehicle_id, ratio, r.q_fr, r.speed, dwell)

    def merge(self, other: "ProfileAccumulator") -> "ProfileAccumulator":
        for b, acc in other.bins.items():
            mine = self.bins[b]
            mine.ratios.extend(acc.ratios)
            mine.dwell += acc.dwell
            mine.fuel_dwell += acc.fuel_dwell
            mine.speed_dwell += acc.speed_dwell
            for vid, (s, k) in acc.per_vehicle.items():
                pv = mine.per_vehicle[vid]
                pv[0] += s
                pv[1] += k
        return self

    def profiles(self, averaging: str = "sample") -> dict[OperatingBin, BinProfile]:
        """Finalize.  ``averaging`` is ``"sample"`` (pool all records) or
        ``"vehicle"`` (average each vehicle first, then across vehicles)."""
        if averaging not in ("sample", "vehicle"):
            raise ValueError(f"averaging must be 'sample' or 'vehicle', got {averaging!r}")
        total_dwell = sum(acc.dwell for acc in self.bins.values())
        out = {}
        for b in OperatingBin:
            acc = self.bins[b]
            n = len(acc.ratios)
            if n:
                arr = np.sort(np.asarray(acc.ratios, dtype=float))
                if averaging == "sample":
                    mean = math.fsum(arr) / n
                else:
                    mean = math.fsum(s / k for s, k in acc.per_vehicle.values()) / len(acc.per_vehicle)
                p25, med, p75 = np.percentile(arr, [25, 50, 75])
            else:
                mean = med = p25 = p75 = NAN
            out[b] = BinProfile(
                bin=b,
                n=n,
                mean_ratio=mean,
                median_ratio=float(med),
                p25=float(p25),
                p75=float(p75),
                mean_fuel_rate=acc.fuel_dwell / acc.dwell if acc.dwell > 0 else NAN,
                mean_speed=acc.speed_dwell / acc.dwell if acc.dwell > 0 else NAN,
                time_fraction=acc.dwell / total_dwell if total_dwell > 0 else 0.0,
                dwell_s=acc.dwell,
                n_vehicles=len(acc.per_vehicle),
            )
        return out


def build_profiles(
    trips: Iterable[Trip],
    c: FuelConstants = DEFAULT_FUEL,
    p: VspParams = DEFAULT_VSP,
    averaging: str = "sample",
    dwell_cap: float = GAP_INTERVAL_S,
) -> dict[OperatingBin, BinProfile]:
    """Per-bin NOx/CO2 statistics and dwell-weighted activity for accepted trips.

    Each valid record contributes one ratio sample to its bin; zero-fuel
    records add dwell time but no ratio.  Dwell is the interval to the next
    record (the previous one for the last record), capped at ``dwell_cap``.
    """
    acc = ProfileAccumulator(c, p, dwell_cap)
    for trip in trips:
        acc.add_trip(trip)
    if not any(a.dwell > 0 or a.ratios for a in acc.bins.values()):
        raise EmptyInput("no valid OBM records to profile")
    return acc.profiles(averaging)


def pass_profiles(passes: Iterable[RsdPass], c: FuelConstants = DEFAULT_FUEL, p: VspParams = DEFAULT_VSP) -> dict[OperatingBin, BinProfile]:
    """Bin distribution and ratio statistics of remote-sensing passes (one unit of weight each)."""
    acc = ProfileAccumulator(c, p)
    for ps in passes:
        b = classify(ps.speed, ps.accel, vsp_kmh(ps.speed, ps.accel, p))
        acc.add(b, ps.vehicle_id, rsd_ratio_from_q3(ps.q3_raw, c), NAN, ps.speed, 1.0)
    return acc.profiles()


# ---------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class ThresholdTable:
    """High-emitter cut points on the NOx/CO2 ratio.

    ``per_bin`` holds the effective threshold of every bin (NaN when none
    could be derived); ``source`` tells whether it came from the bin itself,
    its speed range, or nowhere.
    """

    per_bin: Mapping[OperatingBin, float]
    source: Mapping[OperatingBin, str]
    per_range: Mapping[SpeedClass, float]
    multiplier: float
    min_samples: int
    provenance: str = "data"

    def threshold_for(self, bin_id: OperatingBin) -> float | None:
        value = self.per_bin.get(bin_id, NAN)
        return None if math.isnan(value) else value

    def to_json(self) -> dict:
        return {
            "format": THRESHOLD_FORMAT,
            "multiplier": self.multiplier,
            "min_samples": self.min_samples,
            "provenance": self.provenance,
            "per_bin": {b.label: _json_num(self.per_bin[b]) for b in OperatingBin},
            "source": {b.label: self.source[b] for b in OperatingBin},
            "per_range": {k.value: _json_num(v) for k, v in self.per_range.items()},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ThresholdTable":
        if data.get("format") != THRESHOLD_FORMAT:
            raise ValueError(f"unsupported threshold format {data.get('format')!r}")
        num = lambda v: NAN if v is None else float(v)  # noqa: E731
        return cls(
            per_bin={OperatingBin.parse(k): num(v) for k, v in data["per_bin"].items()},
            source={OperatingBin.parse(k): v for k, v in data["source"].items()},
            per_range={SpeedClass(k): num(v) for k, v in data["per_range"].items()},
            multiplier=float(data["multiplier"]),
            min_samples=int(data["min_samples"]),
            provenance=data.get("provenance", "data"),
        )


def _json_num(x: float):
    return None if x is None or math.isnan(x) else x


def derive_thresholds(
    profiles: Mapping[OperatingBin, BinProfile],
    multiplier: float = 2.0,
    min_samples: int = 100,
    provenance: str = "data",
) -> ThresholdTable:
    """Thresholds at ``multiplier`` times the bin mean ratio.

    Bins with fewer than ``min_samples`` ratio samples inherit the threshold
    of their speed range, which is ``multiplier`` times the sample-weighted
    mean over all of that range's bins.
    """
    if not profiles:
        raise EmptyInput("no profiles")
    if not any(pr.n >= min_samples for pr in profiles.values()):
        raise InsufficientData(f"no bin reaches min_samples={min_samples}")
    per_range: dict[SpeedClass, float] = {}
    for sc in SpeedClass:
        members = [pr for pr in profiles.values() if speed_range(pr.bin) is sc and pr.n > 0]
        total = sum(pr.n for pr in members)
        per_range[sc] = multiplier * math.fsum(pr.n * pr.mean_ratio for pr in members) / total if total else NAN
    per_bin, source = {}, {}
    for b in OperatingBin:
        pr = profiles.get(b)
        if pr is not None and pr.n >= min_samples:
            per_bin[b], source[b] = multiplier * pr.mean_ratio, "bin"
        elif not math.isnan(per_range[speed_range(b)]):
            per_bin[b], source[b] = per_range[speed_range(b)], "range"
        else:
            per_bin[b], source[b] = NAN, "none"
    return ThresholdTable(per_bin, source, per_range, multiplier, min_samples, provenance)


def fleet_fuel_consumption(profiles: Mapping[OperatingBin, BinProfile]) -> float:
    """Fleet fuel consumption in L/km: time-averaged fuel rate over time-averaged speed."""
    num = den = 0.0
    for pr in profiles.values():
        if pr.time_fraction > 0:
            num += pr.mean_fuel_rate * pr.time_fraction
            den += pr.mean_speed * pr.time_fraction
    if not den > 0:
        raise ZeroDistance("no distance travelled in the profiled activity")
    return num / den


def pattern_histogram(profiles: Mapping[OperatingBin, BinProfile]) -> list[tuple[OperatingBin, float]]:
    return [(b, profiles[b].time_fraction) for b in sorted(profiles)]


# -------------------------------------------------------------------- export


def write_profiles_csv(profiles: Mapping[OperatingBin, BinProfile], thresholds: ThresholdTable | None, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {PROFILE_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "n", "mean", "median", "p25", "p75", "threshold", "threshold_source",
                    "mean_fuel_rate_lh", "mean_speed_kmh", "time_fraction", "dwell_s", "n_vehicles"])
        for b in sorted(profiles):
            pr = profiles[b]
            thr = thresholds.per_bin[b] if thresholds else NAN
            src = thresholds.source[b] if thresholds else ""
            w.writerow([b.label, pr.n, _g(pr.mean_ratio), _g(pr.median_ratio), _g(pr.p25), _g(pr.p75),
                        _g(thr), src, _g(pr.mean_fuel_rate), _g(pr.mean_speed), _g(pr.time_fraction),
                        _g(pr.dwell_s), pr.n_vehicles])


def read_profiles_csv(path) -> dict[OperatingBin, BinProfile]:
    with open(path, newline="", encoding="utf-8") as fh:
        head = fh.readline().strip()
        if head != f"# {PROFILE_FORMAT}":
            raise ValueError(f"{path}: unsupported profile format {head!r}")
        out = {}
        for row in csv.DictReader(fh):
            b = OperatingBin.parse(row["bin"])
            f = lambda k: float(row[k]) if row[k] else NAN  # noqa: E731
            out[b] = BinProfile(b, int(row["n"]), f("mean"), f("median"), f("p25"), f("p75"),
                                f("mean_fuel_rate_lh"), f("mean_speed_kmh"), f("time_fraction"),
                                f("dwell_s"), int(row["n_vehicles"]))
    return out


def _g(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_thresholds_json(table: ThresholdTable, path, extra: Mapping | None = None) -> None:
    data = table.to_json()
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_thresholds_json(path) -> tuple[ThresholdTable, dict]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ThresholdTable.from_json(data), data
