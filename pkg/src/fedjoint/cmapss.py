"""Turbofan run-to-failure files (26 whitespace-separated columns per row).

Columns: unit, cycle, three operating settings, sensors 1..21.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import FleetDataset, SiteDataset, UnitRecord, assign_sites

N_COLUMNS = 26
N_SENSORS = 21
INFORMATIVE_SENSORS = (4, 15, 17, 20)
DEFAULT_THRESHOLD = 250.0
ENV_PATH = "FEDJOINT_FD001"


class ParseError(ValueError):
    pass


@dataclass
class EngineSeries:
    unit_id: int
    cycles: np.ndarray
    values: np.ndarray     # (n_cycles, 24): settings then sensors


def parse_fd001(path) -> list:
    """Parse a training file into per-unit series, checking the row schema."""
    units: dict = {}
    n_rows = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != N_COLUMNS:
                raise ParseError(f"line {lineno}: expected {N_COLUMNS} fields, found {len(parts)}")
            try:
                nums = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric field") from None
            uid, cyc = int(nums[0]), int(nums[1])
            rec = units.setdefault(uid, ([], []))
            expected = len(rec[0]) + 1
            if cyc != expected:
                raise ParseError(f"line {lineno}: unit {uid} cycle {cyc}, expected {expected}")
            rec[0].append(cyc)
            rec[1].append(nums[2:])
            n_rows += 1
    if n_rows == 0:
        raise ParseError(f"{path}: no data rows")
    return [EngineSeries(uid, np.array(c, dtype=float), np.array(v, dtype=float))
            for uid, (c, v) in sorted(units.items())]


def sensor_column(sensor_index: int) -> int:
    """1-based file column of a sensor."""
    if not 1 <= sensor_index <= N_SENSORS:
        raise ValueError(f"sensor index must lie in 1..{N_SENSORS}")
    return 5 + sensor_index


def select_sensor(series: EngineSeries, sensor_index: int) -> np.ndarray:
    # values start at file column 3
    return series.values[:, sensor_column(sensor_index) - 3].copy()


def apply_censor_threshold(cycles, threshold: float = DEFAULT_THRESHOLD):
    """(V, delta, keep mask): units running past the threshold are censored at it."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    cycles = np.asarray(cycles, dtype=float)
    end = float(cycles[-1])
    if end > threshold:
        return float(threshold), 0, cycles <= threshold
    return end, 1, np.ones(len(cycles), dtype=bool)


def to_units(series_list, sensor_index: int, threshold: float = DEFAULT_THRESHOLD) -> list:
    out = []
    for s in series_list:
        y = select_sensor(s, sensor_index)
        V, delta, keep = apply_censor_threshold(s.cycles, threshold)
        out.append(UnitRecord(0, s.unit_id, V, delta, s.cycles[keep], y[keep], []))
    return out


def standardize(fleet: FleetDataset, train_site_ids, stats=None):
    """Centre and scale signals by the training-site mean and SD."""
    if stats is None:
        y = np.concatenate([u.signal for s in fleet.sites if s.site_id in train_site_ids
                            for u in s.units])
        sd = float(np.std(y))
        stats = (float(np.mean(y)), sd if sd > 0 else 1.0)
    mu, sd = stats
    sites = [SiteDataset(s.site_id, [replace(u, signal=(u.signal - mu) / sd) for u in s.units])
             for s in fleet.sites]
    return FleetDataset(sites), stats


def split_sites(units, seed: int, n_test: int = 20, train_sizes=(20, 20)) -> FleetDataset:
    """Site 0 holds the test units; training sites are drawn from the rest."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    test = [units[i] for i in order[:n_test]]
    rest = [units[i] for i in order[n_test:]]
    train = assign_sites(rest, train_sizes, int(rng.integers(2**31)))
    sites = [SiteDataset(0, [_site(u, 0) for u in test])]
    sites += [SiteDataset(s.site_id + 1, [_site(u, s.site_id + 1) for u in s.units])
              for s in train.sites]
    return FleetDataset(sites)


def _site(u, k):
    return replace(u, site_id=k)


def locate_fd001(path=None):
    """Resolve the FD001 training file: explicit path, env variable, or data/ folder."""
    cands = [path, os.environ.get(ENV_PATH), "data/train_FD001.txt",
             str(Path(__file__).resolve().parents[2] / "data" / "train_FD001.txt")]
    for c in cands:
        if c and Path(c).is_file():
            return Path(c)
    return None
