"""Parsing, validation, trip segmentation and quality filtering of OBM and RSD data.

OBM quality rules applied to each trip:

* the trip lasts at least 30 minutes;
* at most 30% of inter-record intervals exceed 12 s;
* fewer than 30% of records are invalid, where a record is invalid when a
  required field is out of range / non-finite, or sits in a run of 10 or more
  identical consecutive values of an emission-rate input.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DegenerateTrip, EmptyFile, MissingColumn

log = logging.getLogger(__name__)

GAP_INTERVAL_S = 12.0
MIN_TRIP_DURATION_S = 1800.0
MAX_GAP_FRACTION = 0.30
MAX_INVALID_FRACTION = 0.30
FROZEN_RUN_LEN = 10
IDLE_GAP_S = 1800.0

REQUIRED_OBM_FIELDS = ("speed", "nox_out", "q_fr", "q_maf", "lat", "lon")
# Parked trucks legitimately hold speed and position, so the stuck-sensor rule
# only looks at the inputs of the NOx emission rate.
FROZEN_FIELDS = ("nox_out", "q_maf", "q_fr")

OBM_COLUMNS = {
    "vehicle_id": "vehicle_id",
    "timestamp": "timestamp",
    "speed": "speed_kmh",
    "nox_out": "nox_ppm",
    "q_maf": "maf_kgh",
    "q_fr": "fuel_rate_lh",
    "lat": "lat",
    "lon": "lon",
    "scr_temp": "scr_temp_c",
    "tank_level": "tank_pct",
}
OBM_OPTIONAL = ("scr_temp", "tank_level")

RSD_COLUMNS = {
    "vehicle_id": "vehicle_id",
    "timestamp": "timestamp",
    "site_id": "site_id",
    "speed": "speed_kmh",
    "accel": "accel_ms2",
    "no_ppm": "no_ppm",
    "q1": "co_co2",
    "q2": "hc_co2",
    "q3_raw": "no_co2",
    "emission_standard": "standard",
    "fuel_type": "fuel",
}


class EmissionStandard(str, Enum):
    CHINA_IV = "ChinaIV"
    CHINA_V = "ChinaV"
    CHINA_VI = "ChinaVI"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "EmissionStandard":
        key = text.strip().replace(" ", "").replace("_", "").replace("-", "").lower()
        key = key.removeprefix("china")
        return {"iv": cls.CHINA_IV, "4": cls.CHINA_IV, "v": cls.CHINA_V, "5": cls.CHINA_V,
                "vi": cls.CHINA_VI, "6": cls.CHINA_VI}.get(key, cls.OTHER)


class FuelType(str, Enum):
    DIESEL = "Diesel"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "FuelType":
        return cls.DIESEL if text.strip().lower() == "diesel" else cls.OTHER


@dataclass(slots=True)
class ObmRecord:
    vehicle_id: str
    timestamp: float
    speed: float
    nox_out: float
    q_maf: float
    q_fr: float
    lat: float
    lon: float
    scr_temp: float | None = None
    tank_level: float | None = None
    valid: bool = True
    violated: frozenset = frozenset()


@dataclass(frozen=True, slots=True)
class RsdPass:
    vehicle_id: str
    timestamp: float
    site_id: str
    speed: float
    accel: float
    no_ppm: float
    q1: float
    q2: float
    q3_raw: float
    emission_standard: EmissionStandard = EmissionStandard.CHINA_V
    fuel_type: FuelType = FuelType.DIESEL


@dataclass(frozen=True)
class ParseIssue:
    row: int
    kind: str
    reason: str
    source: str = ""


@dataclass(frozen=True)
class RangeTable:
    """Closed [lo, hi] envelopes for the required OBM fields."""

    speed: tuple[float, float] = (0.0, 120.0)
    nox_out: tuple[float, float] = (0.0, 5000.0)
    q_fr: tuple[float, float] = (0.0, 200.0)
    q_maf: tuple[float, float] = (0.0, 5000.0)
    lat: tuple[float, float] = (-90.0, 90.0)
    lon: tuple[float, float] = (-180.0, 180.0)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Sequence[float]]) -> "RangeTable":
        unknown = set(data) - set(REQUIRED_OBM_FIELDS)
        if unknown:
            raise ValueError(f"unknown range fields: {sorted(unknown)}")
        kwargs = {k: (float(v[0]), float(v[1])) for k, v in data.items()}
        return cls(**kwargs)

    def as_dict(self) -> dict[str, list[float]]:
        return {name: list(getattr(self, name)) for name in REQUIRED_OBM_FIELDS}


DEFAULT_RANGES = RangeTable()


@dataclass
class Trip:
    vehicle_id: str
    records: list[ObmRecord]
    gap_fraction: float
    invalid_fraction: float
    trip_id: str = ""
    accel: list[float] | None = None
    accel_low_confidence: list[bool] | None = None

    @property
    def start(self) -> float:
        return self.records[0].timestamp

    @property
    def end(self) -> float:
        return self.records[-1].timestamp

    @property
    def duration(self) -> float:
        return self.end - self.start


class RejectReason(str, Enum):
    DURATION = "duration"
    GAPS = "gaps"
    INVALID = "invalid"


@dataclass(frozen=True)
class AccelEstimate:
    accel: list[float]
    low_confidence: list[bool]


# ---------------------------------------------------------------- parsing


def _open_text(source) -> tuple[io.TextIOBase, str]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8-sig"), os.fspath(source)
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"), newline=""), "<bytes>"
    if isinstance(source, io.TextIOBase):
        return source, getattr(source, "name", "<text>")
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline=""), getattr(source, "name", "<stream>")


def parse_timestamp(text: str, iso: bool) -> float:
    """UNIX seconds from epoch seconds or ISO-8601 (naive ISO is taken as UTC)."""
    if not iso:
        return float(text)
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _looks_iso(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return True
    return False


def _read_rows(source, schema: Mapping[str, str], required: Iterable[str]):
    stream, name = _open_text(source)
    try:
        reader = csv.reader(stream)
        header = None
        for header in reader:
            if any(cell.strip() for cell in header) and not header[0].lstrip().startswith("#"):
                break
        else:
            header = None
        if header is None:
            raise EmptyFile(f"{name}: no header row")
        index = {col.strip(): i for i, col in enumerate(header)}
        for fld in required:
            if schema[fld] not in index:
                raise MissingColumn(schema[fld])
        cols = {fld: index[col] for fld, col in schema.items() if col in index}
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    finally:
        if not isinstance(source, io.TextIOBase):
            stream.close()
    ts_col = cols["timestamp"]
    first = next((r[ts_col].strip() for r in rows if len(r) > ts_col and r[ts_col].strip()), "0")
    return rows, cols, _looks_iso(first), name


def _cell(row: list[str], cols: Mapping[str, int], fld: str) -> str:
    i = cols[fld]
    if i >= len(row):
        raise ValueError(f"{fld}: missing cell")
    return row[i].strip()


def _num(row, cols, fld) -> float:
    text = _cell(row, cols, fld)
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{fld}: non-numeric value {text!r}") from None


def _opt_num(row, cols, fld) -> float | None:
    if fld not in cols:
        return None
    text = _cell(row, cols, fld) if cols[fld] < len(row) else ""
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{fld}: non-numeric value {text!r}") from None


def parse_obm_file(source, schema: Mapping[str, str] | None = None) -> tuple[list[ObmRecord], list[ParseIssue]]:
    """Parse a delimited OBM export into records and per-row issues.

    Row numbers in issues are 1-based data rows (header excluded).  Every data
    row produces exactly one record or one issue.

    Raises:
        EmptyFile: no header row.
        MissingColumn: a required column is absent from the header.
    """
    schema = {**OBM_COLUMNS, **(schema or {})}
    required = [f for f in OBM_COLUMNS if f not in OBM_OPTIONAL]
    rows, cols, iso, name = _read_rows(source, schema, required)
    records: list[ObmRecord] = []
    issues: list[ParseIssue] = []
    for n, row in enumerate(rows, start=1):
        try:
            ts = parse_timestamp(_cell(row, cols, "timestamp"), iso)
            rec = ObmRecord(
                vehicle_id=_cell(row, cols, "vehicle_id"),
                timestamp=ts,
                speed=_num(row, cols, "speed"),
                nox_out=_num(row, cols, "nox_out"),
                q_maf=_num(row, cols, "q_maf"),
                q_fr=_num(row, cols, "q_fr"),
                lat=_num(row, cols, "lat"),
                lon=_num(row, cols, "lon"),
                scr_temp=_opt_num(row, cols, "scr_temp"),
                tank_level=_opt_num(row, cols, "tank_level"),
            )
            if not rec.vehicle_id:
                raise ValueError("vehicle_id: empty")
            if not math.isfinite(ts):
                raise ValueError("timestamp: not finite")
        except ValueError as exc:
            issues.append(ParseIssue(n, "MalformedRow", str(exc), name))
            continue
        records.append(rec)
    for issue in issues:
        log.info("OBM %s row %d rejected: %s", name, issue.row, issue.reason)
    return records, issues


def parse_rsd_file(source, schema: Mapping[str, str] | None = None) -> tuple[list[RsdPass], list[ParseIssue]]:
    """Parse a remote-sensing export.  Same row accounting as :func:`parse_obm_file`.

    Negative speeds, concentrations or gas ratios are row issues.  Passes from
    non-diesel or non-China-V vehicles are kept and filtered later.
    """
    schema = {**RSD_COLUMNS, **(schema or {})}
    rows, cols, iso, name = _read_rows(source, schema, RSD_COLUMNS)
    passes: list[RsdPass] = []
    issues: list[ParseIssue] = []
    for n, row in enumerate(rows, start=1):
        try:
            p = RsdPass(
                vehicle_id=_cell(row, cols, "vehicle_id"),
                timestamp=parse_timestamp(_cell(row, cols, "timestamp"), iso),
                site_id=_cell(row, cols, "site_id"),
                speed=_num(row, cols, "speed"),
                accel=_num(row, cols, "accel"),
                no_ppm=_num(row, cols, "no_ppm"),
                q1=_num(row, cols, "q1"),
                q2=_num(row, cols, "q2"),
                q3_raw=_num(row, cols, "q3_raw"),
                emission_standard=EmissionStandard.parse(_cell(row, cols, "emission_standard")),
                fuel_type=FuelType.parse(_cell(row, cols, "fuel_type")),
            )
            if not p.vehicle_id:
                raise ValueError("vehicle_id: empty")
            for fld in ("timestamp", "speed", "accel", "no_ppm", "q1", "q2", "q3_raw"):
                if not math.isfinite(getattr(p, fld)):
                    raise ValueError(f"{fld}: not finite")
            for fld in ("speed", "no_ppm", "q1", "q2", "q3_raw"):
                if getattr(p, fld) < 0:
                    raise ValueError(f"{fld}: negative value {getattr(p, fld)}")
        except ValueError as exc:
            issues.append(ParseIssue(n, "MalformedRow", str(exc), name))
            continue
        passes.append(p)
    for issue in issues:
        log.info("RSD %s row %d rejected: %s", name, issue.row, issue.reason)
    return passes, issues


def select_screenable(
    passes: Iterable[RsdPass],
    standards: Iterable[EmissionStandard] = (EmissionStandard.CHINA_V,),
    fuels: Iterable[FuelType] = (FuelType.DIESEL,),
) -> tuple[list[RsdPass], list[RsdPass]]:
    """Split passes into (kept, excluded) by emission standard and fuel."""
    standards, fuels = set(standards), set(fuels)
    kept, excluded = [], []
    for p in passes:
        (kept if p.emission_standard in standards and p.fuel_type in fuels else excluded).append(p)
    return kept, excluded


# ------------------------------------------------------------- validation


def validate_record(r: ObmRecord, ranges: RangeTable = DEFAULT_RANGES) -> tuple[bool, frozenset]:
    violated = set()
    for name in REQUIRED_OBM_FIELDS:
        value = getattr(r, name)
        lo, hi = getattr(ranges, name)
        if not (math.isfinite(value) and lo <= value <= hi):
            violated.add(name)
    return not violated, frozenset(violated)


def apply_validation(records: Iterable[ObmRecord], ranges: RangeTable = DEFAULT_RANGES) -> None:
    for r in records:
        r.valid, r.violated = validate_record(r, ranges)


def mark_frozen_runs(
    records: Sequence[ObmRecord], run_len: int = FROZEN_RUN_LEN, fields: Sequence[str] = FROZEN_FIELDS
) -> dict[int, set[str]]:
    """Indices of records inside runs of >= ``run_len`` identical values, per field."""
    downgrades: dict[int, set[str]] = defaultdict(set)
    n = len(records)
    for name in fields:
        start = 0
        while start < n:
            value = getattr(records[start], name)
            end = start + 1
            while end < n and getattr(records[end], name) == value:
                end += 1
            if end - start >= run_len:
                for i in range(start, end):
                    downgrades[i].add(name)
            start = end
    return dict(downgrades)


def apply_downgrades(records: Sequence[ObmRecord], downgrades: Mapping[int, set[str]]) -> None:
    for i, names in downgrades.items():
        r = records[i]
        r.valid = False
        r.violated = r.violated | {f"frozen:{n}" for n in names}


# ---------------------------------------------------------- segmentation


def _fractions(records: Sequence[ObmRecord], gap_s: float) -> tuple[float, float]:
    n = len(records)
    if n == 0:
        return 1.0, 1.0
    gaps = sum(1 for a, b in zip(records, records[1:]) if b.timestamp - a.timestamp > gap_s)
    gap_fraction = gaps / (n - 1) if n > 1 else 1.0
    invalid = sum(1 for r in records if not r.valid)
    return gap_fraction, invalid / n


def make_trip(vehicle_id: str, records: list[ObmRecord], trip_id: str = "", gap_s: float = GAP_INTERVAL_S) -> Trip:
    gap_fraction, invalid_fraction = _fractions(records, gap_s)
    return Trip(vehicle_id, records, gap_fraction, invalid_fraction, trip_id)


def segment_trips(records: Sequence[ObmRecord], idle_gap: float = IDLE_GAP_S, gap_s: float = GAP_INTERVAL_S) -> list[Trip]:
    """Split one vehicle's time-ordered records wherever the gap exceeds ``idle_gap``."""
    trips: list[Trip] = []
    if not records:
        return trips
    vid = records[0].vehicle_id
    chunk = [records[0]]
    for prev, cur in zip(records, records[1:]):
        if cur.timestamp - prev.timestamp > idle_gap:
            trips.append(make_trip(vid, chunk, f"{vid}:{len(trips)}", gap_s))
            chunk = []
        chunk.append(cur)
    trips.append(make_trip(vid, chunk, f"{vid}:{len(trips)}", gap_s))
    return trips


def filter_trips(
    trips: Iterable[Trip],
    min_duration: float = MIN_TRIP_DURATION_S,
    max_gap_fraction: float = MAX_GAP_FRACTION,
    max_invalid_fraction: float = MAX_INVALID_FRACTION,
) -> tuple[list[Trip], list[tuple[Trip, RejectReason]]]:
    """Apply the trip quality rules; rejected trips carry the first failed rule."""
    accepted, rejected = [], []
    for t in trips:
        if t.duration < min_duration:
            reason = RejectReason.DURATION
        elif t.gap_fraction > max_gap_fraction:
            reason = RejectReason.GAPS
        elif t.invalid_fraction >= max_invalid_fraction:
            reason = RejectReason.INVALID
        else:
            accepted.append(t)
            continue
        log.info("trip %s rejected (%s)", t.trip_id, reason.value)
        rejected.append((t, reason))
    return accepted, rejected


# ------------------------------------------------------------ acceleration


def estimate_acceleration(trip: Trip, gap_s: float = GAP_INTERVAL_S) -> AccelEstimate:
    """Finite-difference acceleration in m/s^2 over the actual timestamp deltas.

    Interior points use the central difference, end points one-sided
    differences.  Records next to an interval longer than ``gap_s`` are
    flagged low-confidence.
    """
    recs = trip.records
    n = len(recs)
    if n < 3:
        raise DegenerateTrip(f"trip {trip.trip_id!r} has {n} records; need at least 3")
    t = [r.timestamp for r in recs]
    v = [r.speed / 3.6 for r in recs]
    accel = [0.0] * n
    accel[0] = (v[1] - v[0]) / (t[1] - t[0])
    accel[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    for i in range(1, n - 1):
        accel[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1])
    wide = [t[i + 1] - t[i] > gap_s for i in range(n - 1)]
    low = [False] * n
    for i, w in enumerate(wide):
        if w:
            low[i] = low[i + 1] = True
    for i, a in enumerate(accel):
        if not math.isfinite(a):
            low[i] = True
    return AccelEstimate(accel, low)


AccelerationEstimator = Callable[[Trip], AccelEstimate]

ACCEL_ESTIMATORS: dict[str, AccelerationEstimator] = {
    "finite_difference": estimate_acceleration,
}


def attach_acceleration(trip: Trip, estimator: AccelerationEstimator = estimate_acceleration) -> Trip:
    est = estimator(trip)
    trip.accel = est.accel
    trip.accel_low_confidence = est.low_confidence
    return trip


# --------------------------------------------------------------- pipeline


@dataclass
class IngestResult:
    accepted: list[Trip] = field(default_factory=list)
    rejected: list[tuple[Trip, RejectReason]] = field(default_factory=list)
    issues: list[ParseIssue] = field(default_factory=list)
    rows_in: int = 0
    duplicates: int = 0

    def counts(self) -> dict:
        by_reason = {r.value: 0 for r in RejectReason}
        for _, reason in self.rejected:
            by_reason[reason.value] += 1
        n_records = sum(len(t.records) for t in self.accepted)
        return {
            "rows_in": self.rows_in,
            "parse_issues": len(self.issues),
            "duplicate_timestamps": self.duplicates,
            "trips_total": len(self.accepted) + len(self.rejected),
            "trips_accepted": len(self.accepted),
            "trips_rejected": by_reason,
            "records_accepted": n_records,
        }


def build_trips(
    records: Iterable[ObmRecord],
    ranges: RangeTable = DEFAULT_RANGES,
    idle_gap: float = IDLE_GAP_S,
    run_len: int = FROZEN_RUN_LEN,
    frozen_fields: Sequence[str] = FROZEN_FIELDS,
) -> tuple[list[Trip], int]:
    """Validate, order, de-duplicate and segment records of any number of vehicles.

    Returns the trips (sorted by vehicle then start) and the number of records
    dropped for repeating an earlier timestamp of the same vehicle.
    """
    by_vehicle: dict[str, list[ObmRecord]] = defaultdict(list)
    for r in records:
        by_vehicle[r.vehicle_id].append(r)
    trips: list[Trip] = []
    dropped = 0
    for vid in sorted(by_vehicle):
        recs = sorted(by_vehicle[vid], key=lambda r: r.timestamp)
        unique = [recs[0]]
        for r in recs[1:]:
            if r.timestamp == unique[-1].timestamp:
                dropped += 1
                log.info("vehicle %s: duplicate timestamp %s dropped", vid, r.timestamp)
                continue
            unique.append(r)
        apply_validation(unique, ranges)
        apply_downgrades(unique, mark_frozen_runs(unique, run_len, frozen_fields))
        trips.extend(segment_trips(unique, idle_gap))
    return trips, dropped


def _parse_obm_path(args):
    path, schema = args
    return parse_obm_file(path, schema)


def ingest_obm(
    paths: Sequence[str | os.PathLike],
    schema: Mapping[str, str] | None = None,
    ranges: RangeTable = DEFAULT_RANGES,
    idle_gap: float = IDLE_GAP_S,
    estimator: AccelerationEstimator = estimate_acceleration,
    threads: int = 1,
    **quality,
) -> IngestResult:
    """Full OBM pipeline: parse files, build trips, filter and estimate acceleration."""
    jobs = [(p, schema) for p in paths]
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            parsed = list(pool.map(_parse_obm_path, jobs, chunksize=16))
    else:
        parsed = [_parse_obm_path(j) for j in jobs]
    result = IngestResult()
    records: list[ObmRecord] = []
    for recs, issues in parsed:
        records.extend(recs)
        result.issues.extend(issues)
        result.rows_in += len(recs) + len(issues)
    trips, result.duplicates = build_trips(records, ranges, idle_gap)
    accepted, result.rejected = filter_trips(trips, **quality)
    for t in accepted:
        if len(t.records) < 3:
            result.rejected.append((t, RejectReason.GAPS))
            continue
        result.accepted.append(attach_acceleration(t, estimator))
    return result


# ---------------------------------------------------------- cleaned store

CLEAN_OBM_HEADER = "# noxscreen-clean-obm v1"
CLEAN_COLUMNS = (
    "vehicle_id", "trip_id", "timestamp", "speed_kmh", "nox_ppm", "maf_kgh", "fuel_rate_lh",
    "lat", "lon", "scr_temp_c", "tank_pct", "valid", "violated", "accel_ms2", "accel_low_conf",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_trips_csv(trips: Iterable[Trip], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CLEAN_OBM_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLEAN_COLUMNS)
        for t in trips:
            accel = t.accel or [math.nan] * len(t.records)
            low = t.accel_low_confidence or [True] * len(t.records)
            for r, a, lc in zip(t.records, accel, low):
                w.writerow([
                    r.vehicle_id, t.trip_id, _fmt(r.timestamp), _fmt(r.speed), _fmt(r.nox_out),
                    _fmt(r.q_maf), _fmt(r.q_fr), _fmt(r.lat), _fmt(r.lon), _fmt(r.scr_temp),
                    _fmt(r.tank_level), int(r.valid), ";".join(sorted(r.violated)), _fmt(a), int(lc),
                ])


def read_trips_csv(path, gap_s: float = GAP_INTERVAL_S) -> list[Trip]:
    """Load trips persisted by :func:`write_trips_csv`, preserving file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != CLEAN_OBM_HEADER:
            raise EmptyFile(f"{path}: not a cleaned OBM file (header {first!r})")
        reader = csv.DictReader(fh)
        groups: dict[str, tuple[str, list, list, list]] = {}
        order: list[str] = []
        for row in reader:
            tid = row["trip_id"]
            if tid not in groups:
                groups[tid] = (row["vehicle_id"], [], [], [])
                order.append(tid)
            _, recs, acc, low = groups[tid]
            opt = lambda k: float(row[k]) if row[k] else None  # noqa: E731
            recs.append(ObmRecord(
                row["vehicle_id"], float(row["timestamp"]), float(row["speed_kmh"]), float(row["nox_ppm"]),
                float(row["maf_kgh"]), float(row["fuel_rate_lh"]), float(row["lat"]), float(row["lon"]),
                opt("scr_temp_c"), opt("tank_pct"), row["valid"] == "1",
                frozenset(filter(None, row["violated"].split(";"))),
            ))
            acc.append(float(row["accel_ms2"]))
            low.append(row["accel_low_conf"] == "1")
    trips = []
    for tid in order:
        vid, recs, acc, low = groups[tid]
        trip = make_trip(vid, recs, tid, gap_s)
        trip.accel, trip.accel_low_confidence = acc, low
        trips.append(trip)
    return trips


def write_passes_csv(passes: Iterable[RsdPass], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RSD_COLUMNS.values())
        for p in passes:
            w.writerow([
                p.vehicle_id, _fmt(p.timestamp), p.site_id, _fmt(p.speed), _fmt(p.accel), _fmt(p.no_ppm),
                _fmt(p.q1), _fmt(p.q2), _fmt(p.q3_raw), p.emission_standard.value, p.fuel_type.value,
            ])
