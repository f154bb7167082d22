"""Remote-sensing screening of candidate high-emitters.

Two independent methods run side by side:

``National``
    NO concentration above a fixed ppm limit.
``ObmRsd``
    NOx/CO2 ratio above the OBM-derived threshold of the pass's operating bin.

A vehicle is flagged once two exceedances with different timestamps fall
within the rolling window (183 days by default, endpoints inclusive).  For
ObmRsd both exceedances must share a speed range (or a bin, when screening
at bin granularity).
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .binning import (
    DEFAULT_VSP,
    OperatingBin,
    SpeedClass,
    VspParams,
    classify,
    speed_range,
    vsp_kmh,
)
from .emissions import DEFAULT_FUEL, FuelConstants, rsd_ratio_from_q3
from .errors import UnscreenableBin
from .ingest import FuelType, RsdPass
from .profiling import ThresholdTable

SECONDS_PER_DAY = 86400.0
NATIONAL_LIMIT_PPM = 1500.0
WINDOW_DAYS = 183


class Method(str, Enum):
    NATIONAL = "National"
    OBM_RSD = "ObmRsd"

    @classmethod
    def parse(cls, text: str) -> "Method":
        key = text.strip().lower().replace("+", "").replace("_", "")
        if key == "national":
            return cls.NATIONAL
        if key in ("obmrsd", "obm-rsd"):
            return cls.OBM_RSD
        raise ValueError(f"unknown screening method {text!r}")


@dataclass(frozen=True)
class Exceedance:
    vehicle_id: str
    timestamp: float
    method: Method
    speed_range: SpeedClass | None
    bin: OperatingBin | None
    observed: float
    threshold: float

    def __post_init__(self):
        if not self.observed > self.threshold:
            raise ValueError("an exceedance needs observed > threshold")


@dataclass(frozen=True)
class ScreeningVerdict:
    vehicle_id: str
    method: Method
    flagged: bool
    supporting: tuple[Exceedance, ...] = ()
    window: tuple[float, float] | None = None
    n_exceedances: int = 0
    first_ts: float | None = None
    last_ts: float | None = None
    seen_ranges: frozenset = frozenset()

    @property
    def speed_range(self) -> SpeedClass | None:
        return self.supporting[0].speed_range if self.flagged else None


def evaluate_pass_national(p: RsdPass, limit: float = NATIONAL_LIMIT_PPM) -> Exceedance | None:
    if p.fuel_type is not FuelType.DIESEL:
        raise ValueError(f"national NO limit applies to diesel passes only ({p.vehicle_id})")
    if p.no_ppm > limit:
        return Exceedance(p.vehicle_id, p.timestamp, Method.NATIONAL, None, None, p.no_ppm, limit)
    return None


def pass_bin(p: RsdPass, vp: VspParams = DEFAULT_VSP) -> OperatingBin:
    return classify(p.speed, p.accel, vsp_kmh(p.speed, p.accel, vp))


def evaluate_pass_obm_rsd(
    p: RsdPass,
    t: ThresholdTable,
    c: FuelConstants = DEFAULT_FUEL,
    vp: VspParams = DEFAULT_VSP,
) -> Exceedance | None:
    """Compare the pass's NOx/CO2 ratio to the threshold of its operating bin.

    Returns None when compliant or when no threshold exists for the bin.

    Raises:
        UnscreenableBin: the pass is braking or idling.
    """
    b = pass_bin(p, vp)
    sr = speed_range(b)
    if sr in (SpeedClass.BRAKING, SpeedClass.IDLE):
        raise UnscreenableBin(b)
    threshold = t.threshold_for(b)
    if threshold is None:
        return None
    ratio = rsd_ratio_from_q3(p.q3_raw, c)
    if ratio > threshold:
        return Exceedance(p.vehicle_id, p.timestamp, Method.OBM_RSD, sr, b, ratio, threshold)
    return None


# ------------------------------------------------------------------ ledger


@dataclass
class VehicleState:
    """Exceedance ledger of one vehicle under one method.  Keyed by timestamp,
    so re-delivering an event is a no-op."""

    vehicle_id: str
    method: Method
    granularity: str = "speed_range"
    events: dict[float, Exceedance] = field(default_factory=dict)
    seen_ranges: set = field(default_factory=set)

    def group_key(self, e: Exceedance):
        if self.method is Method.NATIONAL:
            return None
        return e.bin if self.granularity == "bin" else e.speed_range


def evaluate_state(state: VehicleState, window_days: float = WINDOW_DAYS) -> ScreeningVerdict:
    window = window_days * SECONDS_PER_DAY
    groups: dict = defaultdict(list)
    for ts in sorted(state.events):
        e = state.events[ts]
        groups[state.group_key(e)].append(e)
    best: tuple[Exceedance, Exceedance] | None = None
    for events in groups.values():
        for a, b in zip(events, events[1:]):
            if b.timestamp - a.timestamp <= window:
                if best is None or (b.timestamp, a.timestamp) < (best[1].timestamp, best[0].timestamp):
                    best = (a, b)
                break
    stamps = sorted(state.events)
    common = dict(
        n_exceedances=len(stamps),
        first_ts=stamps[0] if stamps else None,
        last_ts=stamps[-1] if stamps else None,
        seen_ranges=frozenset(state.seen_ranges),
    )
    if best is None:
        return ScreeningVerdict(state.vehicle_id, state.method, False, **common)
    return ScreeningVerdict(
        state.vehicle_id, state.method, True, best, (best[0].timestamp, best[1].timestamp), **common
    )


def update_vehicle_state(state: VehicleState, e: Exceedance, window_days: float = WINDOW_DAYS) -> ScreeningVerdict:
    if e.vehicle_id != state.vehicle_id or e.method is not state.method:
        raise ValueError("exceedance does not belong to this ledger")
    state.events.setdefault(e.timestamp, e)
    if e.speed_range is not None:
        state.seen_ranges.add(e.speed_range)
    return evaluate_state(state, window_days)


# ------------------------------------------------------------- batch screen


class Disposition(str, Enum):
    EXCEED = "exceed"
    COMPLIANT = "compliant"
    UNSCREENABLE = "unscreenable"
    NO_THRESHOLD = "no_threshold"


@dataclass(frozen=True)
class PassDisposition:
    vehicle_id: str
    timestamp: float
    site_id: str
    method: Method
    disposition: Disposition
    bin: OperatingBin | None
    observed: float
    threshold: float | None


@dataclass
class ScreeningResult:
    verdicts: dict[Method, dict[str, ScreeningVerdict]]
    dispositions: list[PassDisposition]

    def flagged(self, method: Method) -> set[str]:
        return {v for v, verdict in self.verdicts.get(method, {}).items() if verdict.flagged}


def screen_passes(
    passes: Iterable[RsdPass],
    methods: Iterable[Method] = (Method.NATIONAL, Method.OBM_RSD),
    thresholds: ThresholdTable | None = None,
    c: FuelConstants = DEFAULT_FUEL,
    vp: VspParams = DEFAULT_VSP,
    national_limit: float = NATIONAL_LIMIT_PPM,
    window_days: float = WINDOW_DAYS,
    granularity: str = "speed_range",
) -> ScreeningResult:
    """Screen diesel passes under each method and return per-vehicle verdicts.

    Passes are processed in (vehicle, timestamp, site) order; verdicts do not
    depend on input order.
    """
    if granularity not in ("speed_range", "bin"):
        raise ValueError(f"granularity must be 'speed_range' or 'bin', got {granularity!r}")
    methods = list(dict.fromkeys(methods))
    if Method.OBM_RSD in methods and thresholds is None:
        raise ValueError("ObmRsd screening needs a threshold table")
    ordered = sorted(passes, key=lambda p: (p.vehicle_id, p.timestamp, p.site_id))
    states: dict[Method, dict[str, VehicleState]] = {m: {} for m in methods}
    log: list[PassDisposition] = []
    for p in ordered:
        b = pass_bin(p, vp)
        sr = speed_range(b)
        for m in methods:
            st = states[m].setdefault(p.vehicle_id, VehicleState(p.vehicle_id, m, granularity))
            if m is Method.NATIONAL:
                e = evaluate_pass_national(p, national_limit)
                disp = Disposition.EXCEED if e else Disposition.COMPLIANT
                log.append(PassDisposition(p.vehicle_id, p.timestamp, p.site_id, m, disp, b, p.no_ppm, national_limit))
                st.seen_ranges.add(sr)
            else:
                ratio = rsd_ratio_from_q3(p.q3_raw, c)
                try:
                    e = evaluate_pass_obm_rsd(p, thresholds, c, vp)
                except UnscreenableBin:
                    log.append(PassDisposition(p.vehicle_id, p.timestamp, p.site_id, m, Disposition.UNSCREENABLE, b, ratio, None))
                    continue
                thr = thresholds.threshold_for(b)
                if thr is None:
                    disp = Disposition.NO_THRESHOLD
                else:
                    disp = Disposition.EXCEED if e else Disposition.COMPLIANT
                    st.seen_ranges.add(sr)
                log.append(PassDisposition(p.vehicle_id, p.timestamp, p.site_id, m, disp, b, ratio, thr))
            if e is not None:
                st.events.setdefault(e.timestamp, e)
    verdicts = {
        m: {vid: evaluate_state(st, window_days) for vid, st in sorted(states[m].items())} for m in methods
    }
    return ScreeningResult(verdicts, log)


# ------------------------------------------------------------------ report


def fleet_screening_report(
    verdicts: Mapping[Method, Mapping[str, ScreeningVerdict]] | Iterable[ScreeningVerdict],
    min_vehicles: int = 10,
) -> dict:
    """Per-method counts of vehicles seen and flagged, overall and per speed range.

    A speed range with fewer than ``min_vehicles`` vehicles reports its
    percentage as ``None`` (insufficient data) rather than imputing one.
    """
    if isinstance(verdicts, Mapping):
        flat = [v for per in verdicts.values() for v in per.values()]
    else:
        flat = list(verdicts)
    by_method: dict[Method, list[ScreeningVerdict]] = defaultdict(list)
    for v in flat:
        by_method[v.method].append(v)
    report = {}
    for m in sorted(by_method, key=lambda m: m.value):
        vs = by_method[m]
        flagged = sum(v.flagged for v in vs)
        ranges = {}
        for sr in (SpeedClass.LOW, SpeedClass.MEDIUM, SpeedClass.HIGH):
            seen = [v for v in vs if sr in v.seen_ranges]
            fl = sum(1 for v in seen if v.flagged and v.speed_range is sr)
            enough = len(seen) >= min_vehicles
            ranges[sr.value] = {
                "vehicles": len(seen),
                "flagged": fl,
                "flagged_pct": 100.0 * fl / len(seen) if enough else None,
                "status": "ok" if enough else "insufficient data",
            }
        report[m.value] = {
            "vehicles_seen": len(vs),
            "flagged": flagged,
            "flagged_pct": 100.0 * flagged / len(vs) if vs else None,
            "per_speed_range": ranges,
        }
    return report


def write_verdicts_csv(verdicts: Mapping[Method, Mapping[str, ScreeningVerdict]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "method", "flagged", "n_exceedances", "first_ts", "last_ts", "speed_range"])
        for m in sorted(verdicts, key=lambda m: m.value):
            for vid in sorted(verdicts[m]):
                v = verdicts[m][vid]
                w.writerow([vid, m.value, int(v.flagged), v.n_exceedances, _ts(v.first_ts), _ts(v.last_ts),
                            v.speed_range.value if v.speed_range else ""])


def read_verdicts_csv(path) -> dict[Method, dict[str, ScreeningVerdict]]:
    """Reload the summary columns of exported verdicts (supporting events are not persisted)."""
    out: dict[Method, dict[str, ScreeningVerdict]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            m = Method(row["method"])
            ts = lambda k: float(row[k]) if row[k] else None  # noqa: E731
            out[m][row["vehicle_id"]] = ScreeningVerdict(
                row["vehicle_id"], m, row["flagged"] == "1", n_exceedances=int(row["n_exceedances"]),
                first_ts=ts("first_ts"), last_ts=ts("last_ts"),
            )
    return dict(out)


def write_dispositions_csv(log: Iterable[PassDisposition], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "timestamp", "site_id", "method", "disposition", "bin", "observed", "threshold"])
        for d in log:
            w.writerow([d.vehicle_id, _ts(d.timestamp), d.site_id, d.method.value, d.disposition.value,
                        d.bin.label if d.bin is not None else "", repr(d.observed),
                        "" if d.threshold is None else repr(d.threshold)])


def _ts(x: float | None) -> str:
    if x is None:
        return ""
    return repr(float(x)) if not float(x).is_integer() else str(int(x))
