"""Fuel- and distance-specific NOx emission factors per cohort and speed range."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .binning import DEFAULT_VSP, SCREENABLE_RANGES, VspParams, speed_range
from .emissions import DEFAULT_FUEL, FuelConstants, rsd_ratio_from_q3
from .errors import NonPositiveFC
from .ingest import RsdPass
from .screening import Method, ScreeningVerdict, pass_bin

FACTOR_FORMAT = "noxscreen-factors v1"
TOTAL = "Total"


class Cohort(str, Enum):
    NBV = "NBV"
    HE = "HE"


@dataclass(frozen=True)
class EfConstants:
    """Calibration constants of the fuel-specific factor: NO molar mass,
    carbon content of diesel (g C per kg fuel), carbon molar mass and the HC
    carbon multiplier."""

    no_mass: float = 30.0
    carbon_per_kg: float = 860.0
    carbon_mass: float = 12.0
    hc_carbon: float = 6.0


DEFAULT_EF = EfConstants()


@dataclass(frozen=True)
class EmissionFactor:
    cohort: Cohort
    speed_range: str
    ef_fuel: float
    ef_distance: float
    n_passes: int
    n_vehicles: int = 0
    mean_q1: float = 0.0
    mean_q2: float = 0.0
    mean_q3: float = 0.0


def fuel_specific_ef(q1: float, q2: float, q3: float, k: EfConstants = DEFAULT_EF) -> float:
    """g NOx per kg fuel from CO/CO2, HC/CO2 and NOx/CO2 ratios."""
    return k.no_mass * q3 * k.carbon_per_kg / ((1.0 + q1 + k.hc_carbon * q2) * k.carbon_mass)


def distance_specific_ef(ef_fuel: float, fc: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """g NOx per km from g/kg and fuel consumption in L/km."""
    if not fc > 0:
        raise NonPositiveFC(f"fuel consumption must be > 0 L/km, got {fc}")
    return ef_fuel * fc * c.rho


class FactorTable(dict):
    """Mapping of (cohort, speed range label) to :class:`EmissionFactor`.

    Missing cells are empty cohorts.
    """

    def factor(self, cohort: Cohort, key: str) -> EmissionFactor | None:
        return self.get((cohort, key))

    def delta(self, key: str) -> float | None:
        """HE minus NBV distance factor for a range, None if either is empty."""
        he, nbv = self.factor(Cohort.HE, key), self.factor(Cohort.NBV, key)
        if he is None or nbv is None:
            return None
        return he.ef_distance - nbv.ef_distance

    def empty_cells(self, keys: Iterable[str]) -> list[tuple[Cohort, str]]:
        return [(c, k) for k in keys for c in Cohort if (c, k) not in self]


def cohort_factors(
    passes: Iterable[RsdPass],
    verdicts: Mapping[str, ScreeningVerdict],
    fc: float,
    c: FuelConstants = DEFAULT_FUEL,
    vp: VspParams = DEFAULT_VSP,
    grouping: str = "speed_range",
    convention: str = "mean_of_ratios",
    fc_by_range: Mapping[str, float] | None = None,
    k: EfConstants = DEFAULT_EF,
) -> FactorTable:
    """Emission factors per (cohort, speed range) from remote-sensing passes.

    ``convention="mean_of_ratios"`` averages q1, q2, q3 over the cell's passes
    and evaluates the fuel-specific factor once; ``"per_pass"`` evaluates it
    per pass and averages.  Braking and idle passes are skipped.  With
    ``grouping="total"`` all screenable passes share one cell keyed ``Total``.
    Cells without passes are absent from the table.
    """
    if grouping not in ("speed_range", "total"):
        raise ValueError(f"grouping must be 'speed_range' or 'total', got {grouping!r}")
    if convention not in ("mean_of_ratios", "per_pass"):
        raise ValueError(f"unknown convention {convention!r}")
    cells: dict[tuple[Cohort, str], list] = {}
    for p in passes:
        try:
            verdict = verdicts[p.vehicle_id]
        except KeyError:
            raise KeyError(f"pass of vehicle {p.vehicle_id!r} has no screening verdict") from None
        sr = speed_range(pass_bin(p, vp))
        if sr not in SCREENABLE_RANGES:
            continue
        key = TOTAL if grouping == "total" else sr.value
        cohort = Cohort.HE if verdict.flagged else Cohort.NBV
        cells.setdefault((cohort, key), []).append((p.vehicle_id, p.q1, p.q2, rsd_ratio_from_q3(p.q3_raw, c)))
    table = FactorTable()
    for (cohort, key), rows in sorted(cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        n = len(rows)
        q1 = math.fsum(r[1] for r in rows) / n
        q2 = math.fsum(r[2] for r in rows) / n
        q3 = math.fsum(r[3] for r in rows) / n
        if convention == "mean_of_ratios":
            ef_fuel = fuel_specific_ef(q1, q2, q3, k)
        else:
            ef_fuel = math.fsum(fuel_specific_ef(r[1], r[2], r[3], k) for r in rows) / n
        cell_fc = fc_by_range[key] if fc_by_range and key in fc_by_range else fc
        table[(cohort, key)] = EmissionFactor(
            cohort, key, ef_fuel, distance_specific_ef(ef_fuel, cell_fc, c), n,
            len({r[0] for r in rows}), q1, q2, q3,
        )
    return table


def range_keys(grouping: str = "speed_range") -> list[str]:
    return [TOTAL] if grouping == "total" else [sr.value for sr in SCREENABLE_RANGES]


def write_factors_csv(tables: Mapping[Method, FactorTable], path, report: Mapping | None = None) -> None:
    """One row per (method, range), shaped like a published factor table."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {FACTOR_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "speed_range", "n_vehicles", "he_pct", "ef_nbv_gkm", "ef_he_gkm",
                    "ef_nbv_gkg", "ef_he_gkg", "n_passes_nbv", "n_passes_he"])
        for m in sorted(tables, key=lambda m: m.value):
            t = tables[m]
            keys = sorted({key for _, key in t}, key=_range_order)
            for key in keys:
                nbv, he = t.factor(Cohort.NBV, key), t.factor(Cohort.HE, key)
                n_veh = (nbv.n_vehicles if nbv else 0) + (he.n_vehicles if he else 0)
                he_pct = None
                if report and m.value in report:
                    r = report[m.value]
                    he_pct = r["flagged_pct"] if key == TOTAL else r["per_speed_range"].get(key, {}).get("flagged_pct")
                w.writerow([
                    m.value, key, n_veh, "" if he_pct is None else repr(he_pct),
                    _f(nbv, "ef_distance"), _f(he, "ef_distance"), _f(nbv, "ef_fuel"), _f(he, "ef_fuel"),
                    nbv.n_passes if nbv else 0, he.n_passes if he else 0,
                ])


def read_factors_csv(path, method: Method = Method.OBM_RSD) -> FactorTable:
    """Reload the distance-specific factors of one method."""
    table = FactorTable()
    with open(path, newline="", encoding="utf-8") as fh:
        head = fh.readline().strip()
        if head != f"# {FACTOR_FORMAT}":
            raise ValueError(f"{path}: unsupported factor format {head!r}")
        for row in csv.DictReader(fh):
            if row["method"] != method.value:
                continue
            key = row["speed_range"]
            for cohort, dist, fuel, n in ((Cohort.NBV, "ef_nbv_gkm", "ef_nbv_gkg", "n_passes_nbv"),
                                          (Cohort.HE, "ef_he_gkm", "ef_he_gkg", "n_passes_he")):
                if row[dist]:
                    table[(cohort, key)] = EmissionFactor(cohort, key, float(row[fuel]), float(row[dist]), int(row[n]))
    return table


def _range_order(key: str) -> int:
    order = [TOTAL] + [sr.value for sr in SCREENABLE_RANGES]
    return order.index(key) if key in order else len(order)


def _f(ef: EmissionFactor | None, attr: str) -> str:
    return "" if ef is None else repr(getattr(ef, attr))

