"""Condition-monitoring and survival records distributed over sites."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class UnitRecord:
    """One asset: event time/indicator, an observed signal and static covariates."""

    site_id: int
    unit_id: int
    event_time: float
    event_indicator: int
    timestamps: np.ndarray
    signal: np.ndarray
    covariates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("timestamps", "signal", "covariates"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_obs(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class SiteDataset:
    site_id: int
    units: tuple

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))

    @property
    def unit_count(self) -> int:
        return len(self.units)

    @property
    def n_obs(self) -> int:
        return sum(u.n_obs for u in self.units)


@dataclass(frozen=True)
class FleetDataset:
    sites: tuple

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))

    @property
    def total_units(self) -> int:
        return sum(s.unit_count for s in self.sites)

    @property
    def total_obs(self) -> int:
        return sum(s.n_obs for s in self.sites)

    def site(self, site_id: int) -> SiteDataset:
        for s in self.sites:
            if s.site_id == site_id:
                return s
        raise KeyError(f"no site {site_id}")

    def without(self, site_id: int) -> "FleetDataset":
        return FleetDataset([s for s in self.sites if s.site_id != site_id])


@dataclass
class ValidationReport:
    passed: bool
    violations: list

    def __bool__(self):
        return self.passed


def _unit_violations(unit: UnitRecord) -> list:
    tag = f"site {unit.site_id} unit {unit.unit_id}"
    out = []
    t = unit.timestamps
    if len(t) != len(unit.signal):
        out.append(f"{tag}: timestamps and signal lengths differ")
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        out.append(f"{tag}: timestamps not increasing")
    if len(t) and t[-1] > unit.event_time:
        out.append(f"{tag}: timestamp exceeds event time")
    if np.any(t < 0) or unit.event_time < 0:
        out.append(f"{tag}: negative time")
    if unit.event_indicator not in (0, 1):
        out.append(f"{tag}: event indicator not in {{0,1}}")
    if not (np.all(np.isfinite(unit.signal)) and np.all(np.isfinite(unit.covariates))):
        out.append(f"{tag}: non-finite values")
    return out


def validate(dataset) -> ValidationReport:
    """Check every unit invariant; accept a fleet, a site, or a single unit."""
    if isinstance(dataset, UnitRecord):
        units, sites = [dataset], []
    elif isinstance(dataset, SiteDataset):
        units, sites = list(dataset.units), [dataset]
    else:
        sites = list(dataset.sites)
        units = [u for s in sites for u in s.units]
    violations = []
    for s in sites:
        if any(u.site_id != s.site_id for u in s.units):
            violations.append(f"site {s.site_id}: unit with foreign site_id")
    if len({s.site_id for s in sites}) != len(sites):
        violations.append("duplicate site ids")
    for u in units:
        violations.extend(_unit_violations(u))
    return ValidationReport(not violations, violations)


def truncate_at_fraction(unit: UnitRecord, alpha: float):
    """Cut a unit at t*, the smallest timestamp >= alpha * event_time.

    Returns ``(t_star, partial)`` where ``partial`` keeps observations up to
    and including t*.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    target = alpha * unit.event_time
    t = unit.timestamps
    # tolerate float noise in alpha * V landing just above a grid point
    idx = int(np.searchsorted(t, target - 1e-9 * max(1.0, abs(target)), side="left"))
    if idx >= len(t):
        raise ValueError("fraction beyond observation window")
    t_star = float(t[idx])
    partial = replace(unit, timestamps=t[: idx + 1], signal=unit.signal[: idx + 1])
    return t_star, partial


def assign_sites(units, site_sizes, rng_seed) -> FleetDataset:
    """Randomly partition units into disjoint sites 0..K-1 of the given sizes."""
    units = list(units)
    if sum(site_sizes) > len(units):
        raise ValueError(f"insufficient units: need {sum(site_sizes)}, have {len(units)}")
    order = np.random.default_rng(rng_seed).permutation(len(units))
    sites, pos = [], 0
    for k, size in enumerate(site_sizes):
        chosen = [replace(units[i], site_id=k) for i in order[pos : pos + size]]
        sites.append(SiteDataset(k, chosen))
        pos += size
    return FleetDataset(sites)


def relabel(dataset, site_id: int) -> SiteDataset:
    """Merge units from several sites into one site (used for pooling)."""
    src = dataset.sites if isinstance(dataset, FleetDataset) else dataset
    units = [replace(u, site_id=site_id) for s in src for u in s.units]
    return SiteDataset(site_id, units)


# --- CSV format -----------------------------------------------------------

CSV_COLUMNS = ["unit_id", "event_time", "event_indicator", "covariates", "timestamp", "signal"]


def write_site_csv(site: SiteDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for u in site.units:
            cov = json.dumps([float(c) for c in u.covariates])
            for ti, yi in zip(u.timestamps, u.signal):
                w.writerow([u.unit_id, repr(float(u.event_time)), u.event_indicator, cov,
                            repr(float(ti)), repr(float(yi))])


def read_site_csv(path, site_id: int) -> SiteDataset:
    rows: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            uid = int(row["unit_id"])
            rec = rows.setdefault(uid, {
                "V": float(row["event_time"]), "d": int(row["event_indicator"]),
                "w": json.loads(row["covariates"]), "t": [], "y": []})
            rec["t"].append(float(row["timestamp"]))
            rec["y"].append(float(row["signal"]))
    units = [UnitRecord(site_id, uid, r["V"], r["d"], r["t"], r["y"], r["w"])
             for uid, r in rows.items()]
    return SiteDataset(site_id, units)


def write_fleet(fleet: FleetDataset, directory, extra: dict | None = None) -> Path:
    """Write one CSV per site plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in fleet.sites:
        name = f"site_{s.site_id}.csv"
        write_site_csv(s, directory / name)
        entries.append({"site_id": s.site_id, "file": name, "units": s.unit_count})
    manifest = {"format": "fedjoint-fleet", "version": 1, "sites": entries}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def read_fleet(manifest_path) -> FleetDataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    sites = [read_site_csv(manifest_path.parent / e["file"], e["site_id"])
             for e in manifest["sites"]]
    return FleetDataset(sites)
