"""Command-line front end.

Stages exchange files under the output directory::

    cleaned/  obm_clean.csv rsd_clean.csv quality.json issues.csv
    profile/  profiles.csv thresholds.json
    screen/   verdicts.csv dispositions.csv factors.csv summary.json
    map/      reduction.geojson reduction.csv summary.json summary.txt

Each command prints a one-line JSON summary on stdout.  Exit status is 0 on
success, 1 for usage or configuration errors and 2 for data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .binning import SCREENABLE_RANGES, speed_range
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, EmptyInput, InsufficientData
from .factors import cohort_factors, read_factors_csv, write_factors_csv
from .ingest import (
    ACCEL_ESTIMATORS,
    EmissionStandard,
    FuelType,
    RsdPass,
    ingest_obm,
    parse_rsd_file,
    read_trips_csv,
    select_screenable,
    write_passes_csv,
    write_trips_csv,
)
from .profiling import (
    build_profiles,
    derive_thresholds,
    fleet_fuel_consumption,
    read_thresholds_json,
    write_profiles_csv,
    write_thresholds_json,
)
from .reduction_map import GridSpec, accumulate, export_geojson, summary_text, write_cells_csv
from .screening import (
    Method,
    fleet_screening_report,
    read_verdicts_csv,
    screen_passes,
    write_dispositions_csv,
    write_verdicts_csv,
)
from .synthfleet import FleetSpec, generate

log = logging.getLogger("noxscreen")


def _out(cfg: PipelineConfig, *parts: str) -> Path:
    return Path(cfg.paths.output_dir, *parts)


def _dump_json(data, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path: Path, stage: str) -> dict:
    if not path.exists():
        raise EmptyInput(f"{path} not found; run `noxscreen {stage}` first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _csv_files(directory: str | None, what: str) -> list[Path]:
    if directory is None:
        raise ConfigError(f"no {what} directory configured (paths.{what}_dir or --{what}-dir)")
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise EmptyInput(f"no CSV files in {what} directory {directory}")
    return files


# ------------------------------------------------------------------ commands


def cmd_ingest(cfg: PipelineConfig) -> dict:
    q = cfg.quality
    obm_files = _csv_files(cfg.paths.obm_dir, "obm")
    result = ingest_obm(
        [str(p) for p in obm_files], cfg.obm_schema, cfg.ranges, q.idle_gap_s,
        ACCEL_ESTIMATORS[q.accel_estimator], cfg.threads,
        min_duration=q.min_trip_duration_s, max_gap_fraction=q.max_gap_fraction,
        max_invalid_fraction=q.max_invalid_fraction,
    )
    passes: list[RsdPass] = []
    issues = list(result.issues)
    rsd_files = _csv_files(cfg.paths.rsd_dir, "rsd") if cfg.paths.rsd_dir else []
    for path in rsd_files:
        ps, iss = parse_rsd_file(path, cfg.rsd_schema)
        passes.extend(ps)
        issues.extend(iss)
    standards = [EmissionStandard.parse(s) for s in cfg.screening.standards]
    fuels = [FuelType.parse(f) for f in cfg.screening.fuels]
    kept, excluded = select_screenable(passes, standards, fuels)
    kept.sort(key=lambda p: (p.vehicle_id, p.timestamp, p.site_id))

    out = _out(cfg, "cleaned")
    out.mkdir(parents=True, exist_ok=True)
    write_trips_csv(result.accepted, out / "obm_clean.csv")
    write_passes_csv(kept, out / "rsd_clean.csv")
    with open(out / "issues.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "row", "kind", "reason"])
        for i in issues:
            w.writerow([Path(i.source).name, i.row, i.kind, i.reason])
    quality = {
        "obm": result.counts(),
        "obm_files": len(obm_files),
        "rsd": {
            "files": len(rsd_files),
            "passes_parsed": len(passes),
            "passes_kept": len(kept),
            "passes_excluded": len(excluded),
            "parse_issues": len(issues) - len(result.issues),
        },
    }
    _dump_json(quality, out / "quality.json")
    if not result.accepted:
        raise EmptyInput("no OBM trip passed the quality filter")
    return {"command": "ingest", **quality}


def cmd_profile(cfg: PipelineConfig) -> dict:
    clean = _out(cfg, "cleaned", "obm_clean.csv")
    if not clean.exists():
        raise EmptyInput(f"{clean} not found; run `noxscreen ingest` first")
    trips = read_trips_csv(clean)
    t = cfg.thresholds
    profiles = build_profiles(trips, cfg.fuel, cfg.vsp, t.averaging)
    table = derive_thresholds(profiles, t.multiplier, t.min_samples)
    fc = fleet_fuel_consumption(profiles)
    fc_by_range = {}
    for sr in SCREENABLE_RANGES:
        members = {b: p for b, p in profiles.items() if speed_range(b) is sr}
        try:
            fc_by_range[sr.value] = fleet_fuel_consumption(members)
        except DataError:
            pass
    out = _out(cfg, "profile")
    out.mkdir(parents=True, exist_ok=True)
    write_profiles_csv(profiles, table, out / "profiles.csv")
    write_thresholds_json(table, out / "thresholds.json", {"fc_l_per_km": fc, "fc_by_range_l_per_km": fc_by_range})
    return {
        "command": "profile",
        "trips": len(trips),
        "bins_with_own_threshold": sum(1 for s in table.source.values() if s == "bin"),
        "bins_without_threshold": sum(1 for s in table.source.values() if s == "none"),
        "fc_l_per_100km": 100 * fc,
    }


def _load_passes(cfg: PipelineConfig) -> list[RsdPass]:
    path = _out(cfg, "cleaned", "rsd_clean.csv")
    if not path.exists():
        raise EmptyInput(f"{path} not found; run `noxscreen ingest` first")
    passes, issues = parse_rsd_file(path)
    if issues:
        raise DataError(f"{path}: {len(issues)} malformed rows in a cleaned file")
    return passes


def cmd_screen(cfg: PipelineConfig) -> dict:
    s, f = cfg.screening, cfg.factors
    methods = [Method.parse(m) for m in s.methods]
    passes = _load_passes(cfg)
    if not passes:
        raise EmptyInput("no screenable RSD passes")
    path = _out(cfg, "profile", "thresholds.json")
    if not path.exists():
        raise EmptyInput(f"{path} not found; run `noxscreen profile` first")
    table, extra = read_thresholds_json(path)
    result = screen_passes(passes, methods, table, cfg.fuel, cfg.vsp, s.national_limit_ppm, s.window_days, s.granularity)
    report = fleet_screening_report(result.verdicts, s.min_vehicles_report)
    fc = extra["fc_l_per_km"]
    fc_by_range = extra.get("fc_by_range_l_per_km") if f.per_range_fc else None
    tables = {
        m: cohort_factors(passes, result.verdicts[m], fc, cfg.fuel, cfg.vsp, f.grouping, f.convention, fc_by_range, cfg.ef)
        for m in methods
    }
    out = _out(cfg, "screen")
    out.mkdir(parents=True, exist_ok=True)
    write_verdicts_csv(result.verdicts, out / "verdicts.csv")
    write_dispositions_csv(result.dispositions, out / "dispositions.csv")
    write_factors_csv(tables, out / "factors.csv", report)
    _dump_json(report, out / "summary.json")
    return {
        "command": "screen",
        "passes": len(passes),
        "methods": {m: {"vehicles": r["vehicles_seen"], "flagged": r["flagged"], "flagged_pct": r["flagged_pct"]}
                    for m, r in report.items()},
    }


def _grid_origin(cfg: PipelineConfig, trips) -> GridSpec:
    g = cfg.grid
    if g.origin_lat is not None:
        return GridSpec(g.origin_lat, g.origin_lon, g.cell_size_m)
    lats = [r.lat for t in trips for r in t.records if math.isfinite(r.lat) and -90 <= r.lat <= 90]
    lons = [r.lon for t in trips for r in t.records if math.isfinite(r.lon) and -180 <= r.lon <= 180]
    if not lats or not lons:
        raise EmptyInput("no valid positions to anchor the grid")
    return GridSpec(math.floor(min(lats) * 100) / 100, math.floor(min(lons) * 100) / 100, g.cell_size_m)


def cmd_map(cfg: PipelineConfig) -> dict:
    g = cfg.grid
    method = Method.parse(g.method)
    clean = _out(cfg, "cleaned", "obm_clean.csv")
    verdict_path = _out(cfg, "screen", "verdicts.csv")
    factor_path = _out(cfg, "screen", "factors.csv")
    for p, stage in ((clean, "ingest"), (verdict_path, "screen"), (factor_path, "screen")):
        if not p.exists():
            raise EmptyInput(f"{p} not found; run `noxscreen {stage}` first")
    trips = read_trips_csv(clean)
    verdicts = read_verdicts_csv(verdict_path).get(method)
    if verdicts is None:
        raise EmptyInput(f"no {method.value} verdicts in {verdict_path}")
    factors = read_factors_csv(factor_path, method)
    spec = _grid_origin(cfg, trips)
    grid = accumulate(trips, verdicts, factors, spec, tuple(g.day_window), g.timezone, cfg.vsp)
    out = _out(cfg, "map")
    out.mkdir(parents=True, exist_ok=True)
    export_geojson(grid.cells.values(), spec, out / "reduction.geojson")
    write_cells_csv(grid.cells.values(), out / "reduction.csv")
    summary = grid.summary() | {"method": method.value, "grid": {"origin_lat": spec.origin_lat,
                                                                 "origin_lon": spec.origin_lon,
                                                                 "cell_size_m": spec.cell_size}}
    _dump_json(summary, out / "summary.json")
    (out / "summary.txt").write_text(summary_text(grid), encoding="utf-8")
    return {"command": "map", "reduction_g": summary["reduction_g"], "relative_savings": summary["relative_savings"],
            "n_cells": summary["n_cells"]}


def cmd_simulate(spec: FleetSpec, out_dir: str | Path) -> dict:
    manifest = generate(spec, out_dir)
    return {
        "command": "simulate",
        "out_dir": str(out_dir),
        "n_vehicles": manifest["n_vehicles"],
        "n_he": manifest["n_he"],
        "obm_rows": manifest["obm_rows"],
        "rsd_passes": manifest["rsd"]["n_passes"],
        "analytic_relative_savings": manifest["analytic"]["relative"],
    }


def cmd_report(cfg: PipelineConfig) -> dict:
    report = {
        "version": __version__,
        "quality": _load_json(_out(cfg, "cleaned", "quality.json"), "ingest"),
        "thresholds": _load_json(_out(cfg, "profile", "thresholds.json"), "profile"),
        "screening": _load_json(_out(cfg, "screen", "summary.json"), "screen"),
    }
    map_summary = _out(cfg, "map", "summary.json")
    report["map"] = _load_json(map_summary, "map") if map_summary.exists() else None
    _dump_json(report, _out(cfg, "report.json"))
    m = report["map"]
    return {
        "command": "report",
        "trips_accepted": report["quality"]["obm"]["trips_accepted"],
        "fc_l_per_100km": 100 * report["thresholds"]["fc_l_per_km"],
        "flagged": {k: v["flagged"] for k, v in report["screening"].items()},
        "relative_savings": m["relative_savings"] if m else None,
    }


# ---------------------------------------------------------------------- CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="pipeline config (JSON)")
    common.add_argument("--seed", type=int, help="random seed (simulate)")
    common.add_argument("--threads", type=int, help="worker processes for parsing")
    common.add_argument("-v", "--verbose", action="count")
    parser = _Parser(prog="noxscreen", parents=[common],
                     description="Screen high-NOx diesel trucks from OBM and RSD data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    io = argparse.ArgumentParser(add_help=False, parents=[common])
    io.add_argument("--output-dir", "-o", help="stage output directory")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("ingest", parents=[io], help="parse, validate and segment raw data")
    p.add_argument("--obm-dir")
    p.add_argument("--rsd-dir")

    p = sub.add_parser("profile", parents=[io], help="per-bin profiles and thresholds")
    p.add_argument("--multiplier", type=float)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--averaging", choices=["sample", "vehicle"])

    p = sub.add_parser("screen", parents=[io], help="flag high-emitters and derive factors")
    p.add_argument("--method", choices=["national", "obmrsd", "both"], default="both")
    p.add_argument("--national-limit", type=float, help="ppm")
    p.add_argument("--window-days", type=float)
    p.add_argument("--granularity", choices=["speed_range", "bin"])
    p.add_argument("--factor-grouping", choices=["speed_range", "total"])

    p = sub.add_parser("map", parents=[io], help="grid the reduction potential")
    p.add_argument("--cell-size", type=float, help="metres")
    p.add_argument("--timezone")
    p.add_argument("--map-method", choices=["national", "obmrsd"])

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic fleet")
    p.add_argument("spec", nargs="?", help="fleet spec (JSON); defaults when omitted")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--n-vehicles", type=int)

    sub.add_parser("report", parents=[io], help="combine stage summaries")
    return parser


def _apply_args(cfg: PipelineConfig, args) -> PipelineConfig:
    paths = {"output_dir": getattr(args, "output_dir", None),
             "obm_dir": getattr(args, "obm_dir", None), "rsd_dir": getattr(args, "rsd_dir", None)}
    methods = None
    if getattr(args, "method", None):
        methods = {"national": ("National",), "obmrsd": ("ObmRsd",), "both": ("National", "ObmRsd")}[args.method]
    map_method = {"national": "National", "obmrsd": "ObmRsd"}.get(getattr(args, "map_method", None) or "")
    return cfg.with_overrides(
        paths=paths,
        thresholds={"multiplier": getattr(args, "multiplier", None), "min_samples": getattr(args, "min_samples", None),
                    "averaging": getattr(args, "averaging", None)},
        screening={"methods": methods, "national_limit_ppm": getattr(args, "national_limit", None),
                   "window_days": getattr(args, "window_days", None), "granularity": getattr(args, "granularity", None)},
        factors={"grouping": getattr(args, "factor_grouping", None)},
        grid={"cell_size_m": getattr(args, "cell_size", None), "timezone": getattr(args, "timezone", None),
              "method": map_method},
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
    )


def run(argv: list[str] | None = None) -> tuple[int, dict | None]:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0)
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            spec = FleetSpec.load(args.spec) if args.spec else FleetSpec()
            if getattr(args, "seed", None) is not None:
                spec.seed = args.seed
            if args.n_vehicles is not None:
                spec.n_vehicles = args.n_vehicles
            spec.validate()
            summary = cmd_simulate(spec, args.out)
        else:
            cfg = _apply_args(load_config(getattr(args, "config", None)), args)
            command = {"ingest": cmd_ingest, "profile": cmd_profile, "screen": cmd_screen,
                       "map": cmd_map, "report": cmd_report}[args.command]
            summary = command(cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1, {"command": args.command, "error": str(exc), "kind": "config"}
    except (DataError, InsufficientData, OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return 2, {"command": args.command, "error": str(exc), "kind": type(exc).__name__}
    return 0, summary


def main(argv: list[str] | None = None) -> int:
    code, summary = run(argv)
    if summary is not None:
        print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
