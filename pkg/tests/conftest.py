from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from noxscreen.ingest import ObmRecord, RsdPass
from noxscreen.synthfleet import FleetSpec, generate

OBM_HEADER = "vehicle_id,timestamp,speed_kmh,nox_ppm,maf_kgh,fuel_rate_lh,lat,lon,scr_temp_c,tank_pct"
RSD_HEADER = "vehicle_id,timestamp,site_id,speed_kmh,accel_ms2,no_ppm,co_co2,hc_co2,no_co2,standard,fuel"


def rec(t, speed=40.0, nox=500.0, maf=300.0, fr=20.0, lat=30.6, lon=104.0, vid="V1", **kw) -> ObmRecord:
    return ObmRecord(vid, float(t), speed, nox, maf, fr, lat, lon, **kw)


def stream(n, dt=10.0, t0=0.0, vid="V1", speed=40.0, jitter=True) -> list[ObmRecord]:
    """n records at a fixed cadence; emission inputs vary so no run is frozen."""
    out = []
    for i in range(n):
        j = (i % 7) * 0.1 if jitter else 0.0
        out.append(rec(t0 + i * dt, speed=speed, nox=500.0 + j, maf=300.0 + j, fr=20.0 + j, vid=vid))
    return out


def rsd_pass(vid="V1", ts=0.0, speed=50.0, accel=0.0, q3_raw=0.003, no_ppm=300.0, site="S1", **kw) -> RsdPass:
    return RsdPass(vid, float(ts), site, speed, accel, no_ppm, kw.pop("q1", 0.02), kw.pop("q2", 0.0005), q3_raw, **kw)


def tree_hash(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture(scope="session")
def small_fleet(tmp_path_factory):
    """40 vehicles with three planted high-emitters, generated once per session."""
    root = tmp_path_factory.mktemp("fleet")
    spec = FleetSpec(n_vehicles=40, he_fraction=0.075, seed=11)
    manifest = generate(spec, root)
    return spec, manifest, root


# ------------------------------------------------------- acceptance report

ACCEPTANCE: dict[int, tuple[bool, str, dict, float]] = {}


def record_criterion(n: int, ok: bool, title: str, detail: dict, seconds: float) -> None:
    ACCEPTANCE[n] = (ok, title, detail, seconds)
    print(_criterion_line(n))


def _criterion_line(n: int) -> str:
    ok, title, detail, seconds = ACCEPTANCE[n]
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} [{extra}] ({seconds:.1f}s)"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(_criterion_line(n))
