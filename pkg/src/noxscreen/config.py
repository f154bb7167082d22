"""Pipeline configuration: every tunable constant in one versioned JSON document.

Example::

    {
      "format": "noxscreen-config",
      "version": 1,
      "paths": {"obm_dir": "data/obm", "rsd_dir": "data/rsd", "output_dir": "out"},
      "fuel": {"f_no2": 0.40},
      "thresholds": {"multiplier": 2.0, "min_samples": 100},
      "grid": {"cell_size_m": 200}
    }

Omitted keys take their defaults.  Relative paths resolve against the
directory of the config file.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .binning import VspParams
from .emissions import FuelConstants
from .errors import ConfigError
from .factors import EfConstants
from .ingest import (
    ACCEL_ESTIMATORS,
    IDLE_GAP_S,
    MAX_GAP_FRACTION,
    MAX_INVALID_FRACTION,
    MIN_TRIP_DURATION_S,
    OBM_COLUMNS,
    RSD_COLUMNS,
    EmissionStandard,
    FuelType,
    RangeTable,
)
from .screening import NATIONAL_LIMIT_PPM, WINDOW_DAYS

CONFIG_FORMAT = "noxscreen-config"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class Paths:
    obm_dir: str | None = None
    rsd_dir: str | None = None
    output_dir: str = "noxscreen-out"


@dataclass(frozen=True)
class QualityConfig:
    min_trip_duration_s: float = MIN_TRIP_DURATION_S
    max_gap_fraction: float = MAX_GAP_FRACTION
    max_invalid_fraction: float = MAX_INVALID_FRACTION
    idle_gap_s: float = IDLE_GAP_S
    accel_estimator: str = "finite_difference"


@dataclass(frozen=True)
class ThresholdConfig:
    multiplier: float = 2.0
    min_samples: int = 100
    averaging: str = "sample"


@dataclass(frozen=True)
class ScreeningConfig:
    methods: tuple[str, ...] = ("National", "ObmRsd")
    national_limit_ppm: float = NATIONAL_LIMIT_PPM
    window_days: float = WINDOW_DAYS
    granularity: str = "speed_range"
    standards: tuple[str, ...] = ("ChinaV",)
    fuels: tuple[str, ...] = ("Diesel",)
    min_vehicles_report: int = 10


@dataclass(frozen=True)
class FactorConfig:
    grouping: str = "speed_range"
    convention: str = "mean_of_ratios"
    per_range_fc: bool = False


@dataclass(frozen=True)
class GridConfig:
    origin_lat: float | None = None
    origin_lon: float | None = None
    cell_size_m: float = 200.0
    timezone: str = "Asia/Shanghai"
    day_window: tuple[int, int] = (8, 20)
    method: str = "ObmRsd"


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    fuel: FuelConstants = field(default_factory=FuelConstants)
    vsp: VspParams = field(default_factory=VspParams)
    ef: EfConstants = field(default_factory=EfConstants)
    ranges: RangeTable = field(default_factory=RangeTable)
    quality: QualityConfig = field(default_factory=QualityConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    factors: FactorConfig = field(default_factory=FactorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    obm_schema: Mapping[str, str] = field(default_factory=lambda: dict(OBM_COLUMNS))
    rsd_schema: Mapping[str, str] = field(default_factory=lambda: dict(RSD_COLUMNS))
    seed: int = 0
    threads: int = 1

    def validate(self) -> "PipelineConfig":
        q, t, s, f, g = self.quality, self.thresholds, self.screening, self.factors, self.grid
        _check(q.min_trip_duration_s >= 0, "quality.min_trip_duration_s must be >= 0")
        _check(0 <= q.max_gap_fraction <= 1, "quality.max_gap_fraction must lie in [0, 1]")
        _check(0 < q.max_invalid_fraction <= 1, "quality.max_invalid_fraction must lie in (0, 1]")
        _check(q.idle_gap_s > 0, "quality.idle_gap_s must be > 0")
        _check(q.accel_estimator in ACCEL_ESTIMATORS, f"unknown accel_estimator {q.accel_estimator!r}")
        _check(math.isfinite(t.multiplier) and t.multiplier > 0, "thresholds.multiplier must be > 0")
        _check(t.min_samples >= 1, "thresholds.min_samples must be >= 1")
        _check(t.averaging in ("sample", "vehicle"), "thresholds.averaging must be 'sample' or 'vehicle'")
        _check(s.national_limit_ppm > 0, "screening.national_limit_ppm must be > 0")
        _check(0 < s.window_days <= 3660, "screening.window_days must lie in (0, 3660]")
        _check(s.granularity in ("speed_range", "bin"), "screening.granularity must be 'speed_range' or 'bin'")
        _check(s.min_vehicles_report >= 1, "screening.min_vehicles_report must be >= 1")
        _check(f.grouping in ("speed_range", "total"), "factors.grouping must be 'speed_range' or 'total'")
        _check(f.convention in ("mean_of_ratios", "per_pass"), "factors.convention must be 'mean_of_ratios' or 'per_pass'")
        _check(g.cell_size_m > 0, "grid.cell_size_m must be > 0")
        _check((g.origin_lat is None) == (g.origin_lon is None), "grid.origin_lat and origin_lon go together")
        lo, hi = g.day_window
        _check(0 <= lo < hi <= 24, "grid.day_window must satisfy 0 <= start < end <= 24")
        _check(self.threads >= 1, "threads must be >= 1")
        try:
            from .reduction_map import resolve_tz

            resolve_tz(g.timezone)
            from .screening import Method

            for m in (*s.methods, g.method):
                Method.parse(m)
            for std in s.standards:
                EmissionStandard.parse(std)
            for fu in s.fuels:
                FuelType.parse(fu)
        except (ValueError, KeyError, LookupError) as exc:
            raise ConfigError(str(exc)) from None
        for p in (self.paths.obm_dir, self.paths.rsd_dir):
            _check(p is None or Path(p).is_dir(), f"input directory {p!r} does not exist")
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        d["ranges"] = self.ranges.as_dict()
        return {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, **d}

    def with_overrides(self, **sections) -> "PipelineConfig":
        """Replace fields of nested sections, e.g. ``with_overrides(thresholds={"multiplier": 1.0})``.
        ``None`` values are ignored so argparse defaults can be passed through."""
        changes = {}
        for name, value in sections.items():
            if value is None:
                continue
            if isinstance(value, Mapping):
                value = {k: v for k, v in value.items() if v is not None}
                if value:
                    changes[name] = replace(getattr(self, name), **value)
            else:
                changes[name] = value
        return replace(self, **changes).validate() if changes else self


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


_SECTIONS = {
    "paths": Paths,
    "fuel": FuelConstants,
    "vsp": VspParams,
    "ef": EfConstants,
    "quality": QualityConfig,
    "thresholds": ThresholdConfig,
    "screening": ScreeningConfig,
    "factors": FactorConfig,
    "grid": GridConfig,
}


def _section(cls, data: Any, name: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def config_from_mapping(data: Mapping, base_dir: str | Path | None = None) -> PipelineConfig:
    if data.get("format") != CONFIG_FORMAT:
        raise ConfigError(f"config must declare \"format\": \"{CONFIG_FORMAT}\"")
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {data.get('version')!r}, expected {CONFIG_VERSION}")
    allowed = set(_SECTIONS) | {"format", "version", "ranges", "obm_schema", "rsd_schema", "seed", "threads"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {name: _section(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "paths" in kwargs and base_dir is not None:
        p = kwargs["paths"]
        resolve = lambda x: None if x is None else str(Path(base_dir) / x)  # noqa: E731
        kwargs["paths"] = Paths(resolve(p.obm_dir), resolve(p.rsd_dir), resolve(p.output_dir))
    if "ranges" in data:
        try:
            kwargs["ranges"] = RangeTable.from_mapping(data["ranges"])
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"ranges: {exc}") from None
    for key, defaults in (("obm_schema", OBM_COLUMNS), ("rsd_schema", RSD_COLUMNS)):
        if key in data:
            bad = set(data[key]) - set(defaults)
            if bad:
                raise ConfigError(f"unknown fields in {key}: {sorted(bad)}")
            kwargs[key] = {**defaults, **data[key]}
    for key in ("seed", "threads"):
        if key in data:
            kwargs[key] = int(data[key])
    return PipelineConfig(**kwargs).validate()


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a config file; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig().validate()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_mapping(data, path.parent)
