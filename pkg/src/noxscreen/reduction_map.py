"""Gridded day/night NOx reduction potential of repairing flagged vehicles.

Every consecutive pair of records of a trip is a segment.  Its great-circle
length is credited to the 200 m cell holding the segment midpoint, in the
period (day or night) of its start time.  Flagged vehicles contribute
``distance * max(0, ef_he - ef_nbv)`` of reduction for the segment's speed
range; every vehicle contributes ``distance * ef_nbv`` to the counterfactual
emissions used for relative savings.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Mapping
from zoneinfo import ZoneInfo

from .binning import DEFAULT_VSP, SCREENABLE_RANGES, VspParams, classify, speed_range, vsp_kmh
from .errors import OutOfDomain
from .factors import TOTAL, Cohort, FactorTable
from .ingest import Trip

EARTH_RADIUS_KM = 6371.0088
M_PER_DEG_LON_EQUATOR = 111320.0
M_PER_DEG_LAT = 110540.0


class Period(str, Enum):
    DAY = "Day"
    NIGHT = "Night"


@dataclass(frozen=True)
class GridSpec:
    origin_lat: float
    origin_lon: float
    cell_size: float = 200.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        _check_coord(self.origin_lat, self.origin_lon)

    @property
    def m_per_deg_lon(self) -> float:
        return M_PER_DEG_LON_EQUATOR * math.cos(math.radians(self.origin_lat))


def _check_coord(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon) and -90 <= lat <= 90 and -180 <= lon <= 180):
        raise OutOfDomain(f"invalid WGS84 coordinate ({lat}, {lon})")


def project(lat: float, lon: float, g: GridSpec) -> tuple[int, int]:
    """Cell index of a point on the local equirectangular grid."""
    _check_coord(lat, lon)
    x = (lon - g.origin_lon) * g.m_per_deg_lon
    y = (lat - g.origin_lat) * M_PER_DEG_LAT
    return math.floor(x / g.cell_size), math.floor(y / g.cell_size)


def cell_ring(ix: int, iy: int, g: GridSpec) -> list[list[float]]:
    """Closed [lon, lat] ring of a cell, counter-clockwise."""
    lon0 = g.origin_lon + ix * g.cell_size / g.m_per_deg_lon
    lon1 = g.origin_lon + (ix + 1) * g.cell_size / g.m_per_deg_lon
    lat0 = g.origin_lat + iy * g.cell_size / M_PER_DEG_LAT
    lat1 = g.origin_lat + (iy + 1) * g.cell_size / M_PER_DEG_LAT
    return [[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]]


def traversal_distance(p1: tuple[float, float], p2: tuple[float, float]) -> float:
    """Haversine distance in km between two (lat, lon) points."""
    lat1, lon1 = map(math.radians, p1)
    lat2, lon2 = map(math.radians, p2)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def period_of(ts: float, tz: ZoneInfo | timezone, day_window: tuple[int, int] = (8, 20)) -> Period:
    local = datetime.fromtimestamp(ts, tz)
    hour = local.hour + local.minute / 60 + local.second / 3600
    return Period.DAY if day_window[0] <= hour < day_window[1] else Period.NIGHT


def resolve_tz(name: str) -> ZoneInfo | timezone:
    return timezone.utc if name.upper() == "UTC" else ZoneInfo(name)


@dataclass
class ReductionCell:
    ix: int
    iy: int
    period: Period
    distance_he: float = 0.0
    reduction: float = 0.0
    distance_all: float = 0.0
    baseline: float = 0.0


@dataclass
class ReductionGrid:
    """Mergeable accumulation of segment contributions."""

    cells: dict[tuple[int, int, Period], ReductionCell] = field(default_factory=dict)
    reduction: dict[Period, float] = field(default_factory=lambda: {p: 0.0 for p in Period})
    baseline: dict[Period, float] = field(default_factory=lambda: {p: 0.0 for p in Period})
    distance: dict[Period, float] = field(default_factory=lambda: {p: 0.0 for p in Period})
    dispositions: Counter = field(default_factory=Counter)
    vehicles: set = field(default_factory=set)
    flagged_vehicles: set = field(default_factory=set)

    def add(self, ix: int, iy: int, period: Period, distance: float, flagged: bool,
            reduction: float, baseline: float) -> None:
        cell = self.cells.get((ix, iy, period))
        if cell is None:
            cell = self.cells[(ix, iy, period)] = ReductionCell(ix, iy, period)
        cell.distance_all += distance
        cell.baseline += baseline
        if flagged:
            cell.distance_he += distance
            cell.reduction += reduction
        self.reduction[period] += reduction
        self.baseline[period] += baseline
        self.distance[period] += distance

    def merge(self, other: "ReductionGrid") -> "ReductionGrid":
        for key, c in other.cells.items():
            mine = self.cells.get(key)
            if mine is None:
                mine = self.cells[key] = ReductionCell(c.ix, c.iy, c.period)
            mine.distance_he += c.distance_he
            mine.reduction += c.reduction
            mine.distance_all += c.distance_all
            mine.baseline += c.baseline
        for p in Period:
            self.reduction[p] += other.reduction[p]
            self.baseline[p] += other.baseline[p]
            self.distance[p] += other.distance[p]
        self.dispositions.update(other.dispositions)
        self.vehicles |= other.vehicles
        self.flagged_vehicles |= other.flagged_vehicles
        return self

    @property
    def total_reduction(self) -> float:
        return self.reduction[Period.DAY] + self.reduction[Period.NIGHT]

    @property
    def total_baseline(self) -> float:
        return self.baseline[Period.DAY] + self.baseline[Period.NIGHT]

    @property
    def relative_savings(self) -> float:
        """Reduction over current (un-repaired) emissions."""
        current = self.total_reduction + self.total_baseline
        return self.total_reduction / current if current > 0 else 0.0

    def summary(self) -> dict:
        total = self.total_reduction
        return {
            "reduction_g": {p.value: self.reduction[p] for p in Period} | {"Total": total},
            "counterfactual_g": {p.value: self.baseline[p] for p in Period} | {"Total": self.total_baseline},
            "distance_km": {p.value: self.distance[p] for p in Period},
            "relative_savings": self.relative_savings,
            "n_cells": len(self.cells),
            "vehicles": len(self.vehicles),
            "flagged_vehicles": len(self.flagged_vehicles),
            "reduction_per_flagged_vehicle_g": total / len(self.flagged_vehicles) if self.flagged_vehicles else 0.0,
            "reduction_per_fleet_vehicle_g": total / len(self.vehicles) if self.vehicles else 0.0,
            "segment_dispositions": dict(sorted(self.dispositions.items())),
        }


def accumulate(
    trips: Iterable[Trip],
    flagged: Iterable[str] | Mapping,
    factors: FactorTable,
    g: GridSpec,
    day_window: tuple[int, int] = (8, 20),
    tz: str = "Asia/Shanghai",
    vp: VspParams = DEFAULT_VSP,
    grid: ReductionGrid | None = None,
) -> ReductionGrid:
    """Accumulate every trip's segments onto the grid.

    ``flagged`` is a collection of flagged vehicle ids, or a mapping of
    vehicle id to verdict.  Factors keyed ``Total`` apply to every screenable
    speed range.  Segment dispositions: ``ok``, ``braking_idle``,
    ``missing_factor`` and ``invalid_position``.
    """
    if isinstance(flagged, Mapping):
        flagged_ids = {vid for vid, v in flagged.items() if getattr(v, "flagged", v)}
    else:
        flagged_ids = set(flagged)
    zone = resolve_tz(tz)
    pooled = any(key == TOTAL for _, key in factors)
    grid = grid if grid is not None else ReductionGrid()
    for trip in trips:
        is_he = trip.vehicle_id in flagged_ids
        grid.vehicles.add(trip.vehicle_id)
        if is_he:
            grid.flagged_vehicles.add(trip.vehicle_id)
        recs = trip.records
        accel = trip.accel or [math.nan] * len(recs)
        for i in range(len(recs) - 1):
            a, b = recs[i], recs[i + 1]
            try:
                _check_coord(a.lat, a.lon)
                _check_coord(b.lat, b.lon)
            except OutOfDomain:
                grid.dispositions["invalid_position"] += 1
                continue
            d = traversal_distance((a.lat, a.lon), (b.lat, b.lon))
            ix, iy = project((a.lat + b.lat) / 2, (a.lon + b.lon) / 2, g)
            period = period_of(a.timestamp, zone, day_window)
            acc = accel[i]
            reduction = baseline = 0.0
            if not math.isfinite(acc) or not math.isfinite(a.speed):
                disp = "missing_factor"
            else:
                sr = speed_range(classify(a.speed, acc, vsp_kmh(a.speed, acc, vp)))
                if sr not in SCREENABLE_RANGES:
                    disp = "braking_idle"
                else:
                    key = TOTAL if pooled else sr.value
                    nbv = factors.factor(Cohort.NBV, key)
                    he = factors.factor(Cohort.HE, key)
                    if nbv is None or (is_he and he is None):
                        disp = "missing_factor"
                    else:
                        disp = "ok"
                        baseline = d * nbv.ef_distance
                        if is_he:
                            reduction = d * max(0.0, he.ef_distance - nbv.ef_distance)
            grid.dispositions[disp] += 1
            grid.add(ix, iy, period, d, is_he, reduction, baseline)
    return grid


# -------------------------------------------------------------------- export


def export_geojson(cells: Iterable[ReductionCell], g: GridSpec, path=None) -> dict:
    """FeatureCollection with one square polygon per cell ([lon, lat] order)."""
    features = []
    for c in sorted(cells, key=lambda c: (c.period.value, c.iy, c.ix)):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [cell_ring(c.ix, c.iy, g)]},
            "properties": {
                "ix": c.ix,
                "iy": c.iy,
                "period": c.period.value,
                "distance_km": c.distance_he,
                "reduction_g": c.reduction,
                "distance_all_km": c.distance_all,
                "counterfactual_g": c.baseline,
            },
        })
    doc = {
        "type": "FeatureCollection",
        "grid": {"origin_lat": g.origin_lat, "origin_lon": g.origin_lon, "cell_size_m": g.cell_size},
        "features": features,
    }
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    return doc


def read_geojson(source) -> list[ReductionCell]:
    if isinstance(source, Mapping):
        doc = source
    else:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    cells = []
    for f in doc["features"]:
        p = f["properties"]
        cells.append(ReductionCell(p["ix"], p["iy"], Period(p["period"]), p["distance_km"], p["reduction_g"],
                                   p.get("distance_all_km", 0.0), p.get("counterfactual_g", 0.0)))
    return cells


def write_cells_csv(cells: Iterable[ReductionCell], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "period", "distance_km", "reduction_g", "distance_all_km", "counterfactual_g"])
        for c in sorted(cells, key=lambda c: (c.period.value, c.iy, c.ix)):
            w.writerow([c.ix, c.iy, c.period.value, repr(c.distance_he), repr(c.reduction),
                        repr(c.distance_all), repr(c.baseline)])


def summary_text(grid: ReductionGrid) -> str:
    s = grid.summary()
    lines = [
        "NOx reduction potential",
        f"  day reduction:    {s['reduction_g']['Day'] / 1000:.3f} kg",
        f"  night reduction:  {s['reduction_g']['Night'] / 1000:.3f} kg",
        f"  total reduction:  {s['reduction_g']['Total'] / 1000:.3f} kg",
        f"  relative savings: {100 * s['relative_savings']:.2f} %",
        f"  per flagged vehicle: {s['reduction_per_flagged_vehicle_g']:.2f} g",
        f"  per fleet vehicle:   {s['reduction_per_fleet_vehicle_g']:.2f} g",
        f"  cells: {s['n_cells']}  vehicles: {s['vehicles']}  flagged: {s['flagged_vehicles']}",
    ]
    for k, v in s["segment_dispositions"].items():
        lines.append(f"  segments {k}: {v}")
    return "\n".join(lines) + "\n"
