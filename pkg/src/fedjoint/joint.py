"""Glue between the signal model and the survival model.

A fitted joint model turns any unit (complete or truncated at t*) into a
tabulated trajectory, then feeds it to the Cox model for mean RUL and
conditional failure probabilities.  All four methods share this interface.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cox, mgp
from .data import truncate_at_fraction


def tabulation_grid(t_end: float, step: float = 1.0) -> np.ndarray:
    n = max(int(np.ceil(t_end / step)), 1)
    return np.linspace(0.0, t_end, n + 1)


def tabulate(mean_fn, t_end: float, step: float = 1.0) -> cox.TabulatedTrajectory:
    g = tabulation_grid(t_end, step)
    return cox.TabulatedTrajectory(g, mean_fn(g))


@dataclass
class Prediction:
    site_id: int
    unit_id: int
    alpha: float
    t_star: float
    mean_rul: float
    tail_survival: float
    failure_prob: dict            # dt -> F(t* + dt | t*)
    fallback: bool = False
    trajectory: cox.Trajectory | None = field(default=None, repr=False)


@dataclass
class JointModel:
    """Signal model (MGP state or LMM) plus fitted CoxParams.

    ``t_end`` is the end of the tabulated trajectories (the last inducing
    input for an MGP); curves are held flat beyond it.  ``horizon`` is the
    mean-RUL integration limit.
    """

    method: str
    cox: cox.CoxParams
    horizon: float
    t_end: float
    mgp_state: mgp.MGPState | None = None
    lmm: object = None
    step: float = 1.0
    info: dict = field(default_factory=dict)
    test_prior: str = "empirical"     # "empirical" (MAP) or "none" (plain ELBO fit)

    def __post_init__(self):
        if self.test_prior not in ("empirical", "none"):
            raise ValueError("test_prior must be 'empirical' or 'none'")

    def test_predictor(self, partial_unit) -> mgp.UnitPredictor:
        """MGP predictor of a test unit adapted to its partial signal."""
        prior = mgp.unit_param_prior(self.mgp_state) if self.test_prior == "empirical" else None
        return mgp.adapt_test_unit(partial_unit, self.mgp_state, prior=prior)

    def test_curve(self, partial_unit):
        """(trajectory, fallback flag) for a unit observed up to t*."""
        if self.mgp_state is not None:
            pred = self.test_predictor(partial_unit)
            return tabulate(pred.mean, self.t_end, self.step), pred.fallback
        if self.lmm is not None:
            return self.lmm.unit_trajectory(partial_unit, self.t_end), False
        raise ValueError("joint model has no signal component")

    def predict(self, unit, alpha: float, dts) -> Prediction:
        t_star, partial = truncate_at_fraction(unit, alpha)
        traj, fb = self.test_curve(partial)
        return self.predict_from(unit, alpha, t_star, traj, dts, fb)

    def predict_from(self, unit, alpha, t_star, traj, dts, fallback=False) -> Prediction:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = cox.mean_rul(t_star, unit.covariates, traj, self.cox, self.horizon)
        F = {float(dt): cox.failure_probability(t_star, dt, unit.covariates, traj, self.cox)
             for dt in dts}
        return Prediction(unit.site_id, unit.unit_id, float(alpha), t_star, r.value,
                          r.tail_survival, F, fallback, traj)


def default_horizon(fleet) -> float:
    return 5.0 * max(u.event_time for s in fleet.sites for u in s.units)


def mgp_training_trajectories(fleet, state: mgp.MGPState, t_end: float, step: float = 1.0):
    """Predictive-mean curves of the training units, keyed by (site, unit)."""
    out = {}
    for s in fleet.sites:
        for u in s.units:
            pred = mgp.unit_predictor(u, state, s.site_id)
            out[(s.site_id, u.unit_id)] = tabulate(pred.mean, max(t_end, u.event_time), step)
    return out


# --- persistence ----------------------------------------------------------------------

MODEL_FORMAT = "fedjoint-joint-model"


def _f17(x) -> str:
    return format(float(x), ".17g")


def cox_to_dict(p: cox.CoxParams) -> dict:
    return {"baseline": p.baseline, "log_lambda": _f17(p.log_lambda), "log_rho": _f17(p.log_rho),
            "gamma": [_f17(g) for g in p.gamma], "beta": _f17(p.beta)}


def cox_from_dict(d: dict) -> cox.CoxParams:
    return cox.CoxParams(d["baseline"], float(d["log_lambda"]), float(d["log_rho"]),
                         np.array([float(g) for g in d["gamma"]]), float(d["beta"]))


def save_model(model: JointModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"format": MODEL_FORMAT, "version": 1, "method": model.method,
            "horizon": _f17(model.horizon), "t_end": _f17(model.t_end), "step": _f17(model.step),
            "cox": cox_to_dict(model.cox), "test_prior": model.test_prior}
    if model.mgp_state is not None:
        mgp.save_checkpoint(model.mgp_state, directory / "mgp_checkpoint.json")
        meta["signal"] = "mgp"
    elif model.lmm is not None:
        lm = model.lmm
        meta["signal"] = "lmm"
        meta["lmm"] = {"a": [_f17(x) for x in lm.a], "D": [[_f17(x) for x in r] for r in lm.D],
                       "s2": _f17(lm.s2)}
    (directory / "model.json").write_text(json.dumps(meta, indent=1))


def load_model(directory) -> JointModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    if meta.get("format") != MODEL_FORMAT:
        raise ValueError("not a joint model directory")
    model = JointModel(meta["method"], cox_from_dict(meta["cox"]), float(meta["horizon"]),
                       float(meta["t_end"]), step=float(meta["step"]),
                       test_prior=meta.get("test_prior", "empirical"))
    if meta.get("signal") == "mgp":
        model.mgp_state = mgp.load_checkpoint(directory / "mgp_checkpoint.json")
    elif meta.get("signal") == "lmm":
        from .baselines import LmmModel

        d = meta["lmm"]
        model.lmm = LmmModel(np.array([float(x) for x in d["a"]]),
                             np.array([[float(x) for x in r] for r in d["D"]]), float(d["s2"]))
    return model
