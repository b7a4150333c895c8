import os

os.environ.setdefault("JAX_PLATFORMS", "cpu")

import numpy as np
import pytest

from fedjoint.data import FleetDataset, SiteDataset, UnitRecord

ACCEPTANCE_LINES: list = []


def toy_fleet(n_sites=2, n_units=3, n_obs=10, seed=0, t_max=10.0):
    """Small fleet with shared, evenly spaced timestamps and smooth signals."""
    rng = np.random.default_rng(seed)
    t = np.linspace(t_max / n_obs, t_max, n_obs)
    sites = []
    for k in range(n_sites):
        units = []
        for m in range(n_units):
            a, b = rng.normal(2.0, 0.3), rng.normal(0.1, 0.03)
            y = a + b * t + 0.3 * np.sin(t / 2.0 + m) + rng.normal(0.0, 0.2, size=n_obs)
            V = t_max + rng.uniform(0.5, 5.0)
            units.append(UnitRecord(k, m, V, int(rng.integers(0, 2)), t, y,
                                    [rng.normal()]))
        sites.append(SiteDataset(k, units))
    return FleetDataset(sites)


@pytest.fixture
def fleet():
    return toy_fleet()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_fd001_like(path, lengths, seed=0):
    """Turbofan-format file: unit, cycle, 3 settings, 21 sensors per row."""
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for uid, n in enumerate(lengths, start=1):
            for c in range(1, n + 1):
                settings = rng.normal(0, 0.002, 3)
                sensors = 500.0 + np.arange(21) + rng.normal(0, 0.05, 21)
                sensors[3] = 1400.0 + 0.1 * c + rng.normal(0, 0.5)   # sensor 4 drifts upwards
                fh.write(" ".join([str(uid), str(c)] + [f"{v:.4f}" for v in settings]
                                  + [f"{v:.2f}" for v in sensors]) + " \n")
