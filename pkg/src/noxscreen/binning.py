"""Vehicle specific power and the 22 operating-mode bins.

Speed classes are split at 1.6, 30 and 60 km/h; inside each class the VSP
axis is banded in 2 kW/ton steps.  Every interval is closed on the left and
open on the right.  Braking (acceleration below -0.89 m/s^2) wins over idle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

from .errors import NonFiniteInput

KMH_PER_MS = 3.6
BRAKING_ACCEL = -0.89
IDLE_SPEED_KMH = 1.6
MEDIUM_SPEED_KMH = 30.0
HIGH_SPEED_KMH = 60.0


@dataclass(frozen=True)
class VspParams:
    """Road-load coefficients per ton of vehicle mass; grade in radians."""

    g: float = 9.8
    theta: float = 0.0
    a_over_m: float = 0.0875
    b_over_m: float = 0.0
    c_over_m: float = 0.000331

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("g must be > 0")
        if min(self.a_over_m, self.b_over_m, self.c_over_m) < 0:
            raise ValueError("road-load coefficients must be >= 0")


DEFAULT_VSP = VspParams()


class SpeedClass(str, Enum):
    BRAKING = "Braking"
    IDLE = "Idle"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


SCREENABLE_RANGES = (SpeedClass.LOW, SpeedClass.MEDIUM, SpeedClass.HIGH)


class OperatingBin(IntEnum):
    BIN0 = 0
    BIN1 = 1
    BIN11 = 11
    BIN12 = 12
    BIN13 = 13
    BIN14 = 14
    BIN15 = 15
    BIN16 = 16
    BIN21 = 21
    BIN22 = 22
    BIN23 = 23
    BIN24 = 24
    BIN25 = 25
    BIN26 = 26
    BIN27 = 27
    BIN28 = 28
    BIN33 = 33
    BIN34 = 34
    BIN35 = 35
    BIN36 = 36
    BIN37 = 37
    BIN38 = 38

    @property
    def label(self) -> str:
        return f"Bin{int(self)}"

    @property
    def speed_class(self) -> SpeedClass:
        return speed_range(self)

    @classmethod
    def parse(cls, text: str | int) -> "OperatingBin":
        if isinstance(text, int):
            return cls(text)
        s = str(text).strip()
        if s.lower().startswith("bin"):
            s = s[3:].strip()
        return cls(int(s))


# Upper VSP edges (exclusive) per speed class; the last band is open-ended.
# Low and high classes absorb the blank cells of the published table:
# low-speed >= 4 is one band, high-speed < 0 is one band.
_LOW_EDGES = (-4.0, -2.0, 0.0, 2.0, 4.0)
_MEDIUM_EDGES = (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0)
_HIGH_EDGES = (0.0, 2.0, 4.0, 6.0, 8.0)


def _band(vsp_value: float, edges: tuple[float, ...], first_id: int) -> OperatingBin:
    for offset, edge in enumerate(edges):
        if vsp_value < edge:
            return OperatingBin(first_id + offset)
    return OperatingBin(first_id + len(edges))


def vsp(v: float, a: float, p: VspParams = DEFAULT_VSP) -> float:
    """Vehicle specific power in kW/ton for speed ``v`` (m/s) and accel ``a`` (m/s^2)."""
    if not (math.isfinite(v) and math.isfinite(a)):
        raise NonFiniteInput(f"non-finite VSP input v={v}, a={a}")
    return (
        a * v
        + p.g * v * math.sin(p.theta)
        + p.a_over_m * v
        + p.b_over_m * v * v
        + p.c_over_m * v * v * v
    )


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / KMH_PER_MS


def vsp_kmh(speed_kmh: float, a: float, p: VspParams = DEFAULT_VSP) -> float:
    """VSP for a speed given in km/h; the only place the unit conversion happens."""
    return vsp(kmh_to_ms(speed_kmh), a, p)


def classify(speed: float, accel: float, vsp_value: float) -> OperatingBin:
    """Operating-mode bin for speed (km/h), acceleration (m/s^2) and VSP (kW/ton)."""
    if accel < BRAKING_ACCEL:
        return OperatingBin.BIN0
    if speed < IDLE_SPEED_KMH:
        return OperatingBin.BIN1
    if speed < MEDIUM_SPEED_KMH:
        return _band(vsp_value, _LOW_EDGES, 11)
    if speed < HIGH_SPEED_KMH:
        return _band(vsp_value, _MEDIUM_EDGES, 21)
    return _band(vsp_value, _HIGH_EDGES, 33)


def classify_state(speed_kmh: float, accel: float, p: VspParams = DEFAULT_VSP) -> OperatingBin:
    return classify(speed_kmh, accel, vsp_kmh(speed_kmh, accel, p))


def speed_range(bin_id: OperatingBin) -> SpeedClass:
    b = int(bin_id)
    if b == 0:
        return SpeedClass.BRAKING
    if b == 1:
        return SpeedClass.IDLE
    if 11 <= b <= 16:
        return SpeedClass.LOW
    if 21 <= b <= 28:
        return SpeedClass.MEDIUM
    if 33 <= b <= 38:
        return SpeedClass.HIGH
    raise ValueError(f"unknown bin {bin_id!r}")


def bins_in(speed_class: SpeedClass) -> list[OperatingBin]:
    return [b for b in OperatingBin if speed_range(b) is speed_class]
