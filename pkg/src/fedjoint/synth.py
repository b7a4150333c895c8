"""Synthetic fleets with known degradation paths and a known hazard.

Signal:  f(t) = b0 + b1 t^1.2 + b2 t^1.7 (+ c sin(d t) in scenario II),
observed on t = 1..120 with Gaussian noise.  Failure times follow a Weibull
Cox model driven by the noiseless signal and are drawn by inverting the
CDF tabulated on a half-unit grid.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import cox
from .data import FleetDataset, SiteDataset, UnitRecord

MU_B = (2.5, 0.01, 0.01)
# var(b2) read as 3e-6, mirroring var(b1)
SIGMA_B = ((0.2, -4e-4, 7e-5),
           (-4e-4, 3e-6, 1e-7),
           (7e-5, 1e-7, 3e-6))


@dataclass
class SynthConfig:
    n_sites: int = 3
    units_per_site: int = 10
    scenario: str = "I"
    t_max: int = 120
    mu_b: tuple = MU_B
    sigma_b: tuple = SIGMA_B
    c_range: tuple = (0.99, 1.01)
    d_range: tuple = (0.18, 0.22)
    noise_var: float = 0.2
    covariate_prob: float = 0.5
    censor_fraction: float = 0.05
    lam: float = 0.001
    rho: float = 1.05
    gamma: float = 0.2
    beta: float = 0.5
    inverse_grid_step: float = 0.5
    min_obs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise ValueError("scenario must be 'I' or 'II'")
        S = np.asarray(self.sigma_b, dtype=float)
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() < -1e-15:
            raise ValueError("coefficient covariance must be symmetric PSD")
        for f in (self.covariate_prob, self.censor_fraction):
            if not 0 <= f <= 1:
                raise ValueError("fractions must lie in [0, 1]")

    @property
    def true_params(self) -> cox.CoxParams:
        return cox.CoxParams.weibull(self.lam, self.rho, [self.gamma], self.beta)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.t_max + 1, dtype=float)


def gen_coeffs(rng, mu_b=MU_B, sigma_b=SIGMA_B) -> np.ndarray:
    S = np.asarray(sigma_b, dtype=float)
    mu = np.asarray(mu_b, dtype=float)
    if not np.any(S):
        return mu.copy()
    return rng.multivariate_normal(mu, S, method="eigh")


def true_signal(t, b, scenario="I", c=0.0, d=0.0):
    t = np.asarray(t, dtype=float)
    f = b[0] + b[1] * t**1.2 + b[2] * t**1.7
    if scenario == "II":
        f = f + c * np.sin(d * t)
    return f


@dataclass
class TrueModel:
    """Ground truth of one unit."""

    site_id: int
    unit_id: int
    b: np.ndarray
    c: float
    d: float
    w: np.ndarray
    scenario: str
    params: cox.CoxParams
    failure_time: float = float("nan")

    @property
    def trajectory(self) -> cox.FunctionTrajectory:
        b, sc, c, d = self.b, self.scenario, self.c, self.d
        return cox.FunctionTrajectory(lambda t: true_signal(t, b, sc, c, d))

    def signal(self, t):
        return true_signal(t, self.b, self.scenario, self.c, self.d)

    def hazard(self, t):
        return cox.hazard(t, self.w, self.trajectory, self.params)

    def cumulative_hazard_grid(self, grid) -> np.ndarray:
        """H(g) at every grid point (grid must start at 0 and increase)."""
        grid = np.asarray(grid, dtype=float)
        tr = self.trajectory
        inc = [cox.cumulative_hazard(a, b_, self.w, tr, self.params)
               for a, b_ in zip(grid[:-1], grid[1:])]
        return np.concatenate([[0.0], np.cumsum(inc)])

    def failure_cdf(self, t) -> float:
        return float(-np.expm1(-cox.cumulative_hazard(0.0, float(t), self.w, self.trajectory,
                                                     self.params)))

    def conditional_failure(self, t_star, dt) -> float:
        return cox.failure_probability(t_star, dt, self.w, self.trajectory, self.params)


def true_failure_cdf(t, model: TrueModel) -> float:
    return model.failure_cdf(t)


def cdf_grid(model: TrueModel, t_last: float, step: float = 0.5):
    grid = np.arange(0.0, t_last + 0.5 * step, step)
    grid[-1] = min(grid[-1], t_last)
    F = -np.expm1(-model.cumulative_hazard_grid(grid))
    return grid, F


def invert_cdf(u, grid, F):
    """Linear interpolation of {(F(t), t)}; None when u exceeds F(t_L)."""
    if u > F[-1]:
        return None
    # F can be flat near 0 in float; keep the first grid point of each level
    keep = np.concatenate([[True], np.diff(F) > 0])
    return float(np.interp(u, F[keep], grid[keep]))


def sample_failure_time(model: TrueModel, rng, t_last=120.0, step=0.5, table=None):
    """Return (V, delta).  A draw past F(t_L) is censored at t_L."""
    grid, F = table if table is not None else cdf_grid(model, t_last, step)
    u = rng.uniform()
    v = invert_cdf(u, grid, F)
    if v is None:
        return float(grid[-1]), 0
    return v, 1


def _unit_rng(seed, site, unit):
    return np.random.default_rng([seed, site, unit])


def generate_fleet(config: SynthConfig):
    """Return (fleet, truths); truths maps (site, unit) to TrueModel."""
    grid = config.grid
    t_last = float(grid[-1])
    params = config.true_params
    rows = []
    for k in range(config.n_sites):
        for m in range(config.units_per_site):
            rng = _unit_rng(config.seed, k, m)
            b = gen_coeffs(rng, config.mu_b, config.sigma_b)
            c = rng.uniform(*config.c_range) if config.scenario == "II" else 0.0
            d = rng.uniform(*config.d_range) if config.scenario == "II" else 0.0
            w = np.array([float(rng.uniform() < config.covariate_prob)])
            tm = TrueModel(k, m, b, c, d, w, config.scenario, params)
            table = cdf_grid(tm, t_last, config.inverse_grid_step)
            # redraw failures before the min_obs-th timestamp so every unit has a usable signal
            while True:
                V, delta = sample_failure_time(tm, rng, table=table)
                if V >= grid[min(config.min_obs, len(grid)) - 1]:
                    break
            tm.failure_time = V if delta else float("nan")
            noise = rng.normal(0.0, np.sqrt(config.noise_var), size=len(grid))
            y = tm.signal(grid) + noise
            rows.append([k, m, V, delta, w, y, tm])
    n_cens = int(np.floor(config.censor_fraction * len(rows) + 0.5))
    chosen = np.random.default_rng([config.seed, 10**6]).choice(len(rows), n_cens, replace=False)
    for i in chosen:
        # censor at the last timestamp on or before the drawn event time
        V = rows[i][2]
        rows[i][2], rows[i][3] = float(grid[grid <= V + 1e-12][-1]), 0
    sites = {k: [] for k in range(config.n_sites)}
    truths = {}
    for k, m, V, delta, w, y, tm in rows:
        keep = grid <= V + 1e-12
        sites[k].append(UnitRecord(k, m, V, delta, grid[keep], y[keep], w))
        truths[(k, m)] = tm
    fleet = FleetDataset([SiteDataset(k, us) for k, us in sites.items()])
    return fleet, truths


# --- truth sidecar -------------------------------------------------------------

def truth_to_dict(truths, config: SynthConfig) -> dict:
    units = []
    for (k, m), tm in sorted(truths.items()):
        grid, F = cdf_grid(tm, float(config.t_max), config.inverse_grid_step)
        units.append({
            "site_id": k, "unit_id": m,
            "b": [format(x, ".17g") for x in tm.b],
            "c": format(tm.c, ".17g"), "d": format(tm.d, ".17g"),
            "w": [format(x, ".17g") for x in tm.w],
            "failure_time": format(tm.failure_time, ".17g"),
            "cdf_grid": [format(x, ".17g") for x in grid],
            "cdf": [format(x, ".17g") for x in F],
        })
    cfg = asdict(config)
    return {"format": "fedjoint-truth", "version": 1, "config": cfg, "units": units}


def write_truth(path, truths, config: SynthConfig) -> None:
    with open(path, "w") as fh:
        json.dump(truth_to_dict(truths, config), fh, indent=1)


def read_truth(path):
    """Rebuild (config, truths) from a sidecar file."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != "fedjoint-truth":
        raise ValueError("not a truth sidecar")
    cfg = d["config"]
    cfg = {k: tuple(map(tuple, v)) if k == "sigma_b" else (tuple(v) if isinstance(v, list) else v)
           for k, v in cfg.items()}
    config = SynthConfig(**cfg)
    truths = {}
    for u in d["units"]:
        tm = TrueModel(u["site_id"], u["unit_id"], np.array([float(x) for x in u["b"]]),
                       float(u["c"]), float(u["d"]), np.array([float(x) for x in u["w"]]),
                       config.scenario, config.true_params, float(u["failure_time"]))
        truths[(u["site_id"], u["unit_id"])] = tm
    return config, truths
