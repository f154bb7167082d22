"""Instantaneous NOx/CO2 emission rates and NOx/CO2 ratios.

OBM records give NOx concentration, intake air flow and fuel rate, from which
mass rates of NOx and CO2 follow.  Remote sensing gives a NO/CO2 ratio that is
lifted to NOx/CO2 with a fixed primary NO2 fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import NonFiniteInput, ZeroDenominator, ZeroFuelRate


@dataclass(frozen=True)
class FuelConstants:
    """Diesel constants used by the rate equations.

    Attributes:
        mu: NOx density over exhaust density (dimensionless).
        rho: fuel density, kg/L.
        beta: grams of CO2 per litre of fuel burned, g/L.
        f_no2: NO2 share of NOx at the tailpipe (China V default).
    """

    mu: float = 0.001587
    rho: float = 0.85
    beta: float = 2684.0
    f_no2: float = 0.40

    def __post_init__(self):
        for name in ("mu", "rho", "beta", "f_no2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if self.f_no2 >= 1:
            raise ValueError(f"f_no2 must be < 1, got {self.f_no2}")


DEFAULT_FUEL = FuelConstants()


class Source(str, Enum):
    OBM = "OBM"
    RSD = "RSD"


@dataclass(frozen=True)
class EmissionSample:
    er_nox: float
    er_co2: float
    ratio_nox_co2: float | None
    source: Source = Source.OBM


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteInput(f"{name} is not finite: {value}")


def exhaust_flow(q_maf: float, q_fr: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """Intake air plus fuel mass, kg/h.

    The source equations label this the NOx mass flow; physically it is the
    exhaust mass flow.  Kept exactly as defined there.
    """
    return q_maf + q_fr * c.rho


def nox_rate(nox_out: float, q_maf: float, q_fr: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """NOx mass emission rate in g/s from ppm, kg/h and L/h inputs."""
    _check_finite(nox_out=nox_out, q_maf=q_maf, q_fr=q_fr)
    return c.mu * nox_out * exhaust_flow(q_maf, q_fr, c) / 3600.0


def co2_rate(q_fr: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """CO2 mass emission rate in g/s from fuel rate in L/h."""
    _check_finite(q_fr=q_fr)
    return q_fr * c.beta / 3600.0


def obm_ratio(nox_out: float, q_maf: float, q_fr: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """NOx/CO2 mass ratio for one OBM record.

    Raises:
        ZeroFuelRate: q_fr is zero, so the ratio is undefined.
    """
    _check_finite(nox_out=nox_out, q_maf=q_maf, q_fr=q_fr)
    if q_fr <= 0:
        raise ZeroFuelRate(f"fuel rate {q_fr} L/h gives no CO2 denominator")
    return nox_rate(nox_out, q_maf, q_fr, c) / co2_rate(q_fr, c)


def obm_sample(nox_out: float, q_maf: float, q_fr: float, c: FuelConstants = DEFAULT_FUEL) -> EmissionSample:
    er_nox = nox_rate(nox_out, q_maf, q_fr, c)
    er_co2 = co2_rate(q_fr, c)
    ratio = er_nox / er_co2 if er_co2 > 0 else None
    return EmissionSample(er_nox, er_co2, ratio, Source.OBM)


def rsd_ratio(no_ppm: float, co2: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """NOx/CO2 from absolute NO and CO2 plume concentrations (same units)."""
    _check_finite(no_ppm=no_ppm, co2=co2)
    if co2 <= 0:
        raise ZeroDenominator(f"CO2 concentration must be > 0, got {co2}")
    return (no_ppm / (1.0 - c.f_no2)) / co2


def rsd_ratio_from_q3(q3_raw: float, c: FuelConstants = DEFAULT_FUEL) -> float:
    """NOx/CO2 from an instrument-reported NO/CO2 ratio."""
    _check_finite(q3_raw=q3_raw)
    return q3_raw / (1.0 - c.f_no2)
