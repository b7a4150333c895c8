"""Comparison methods sharing the joint-model prediction interface.

cen  - the same two-stage model on all training units pooled as one site
ind  - the same model on a single training site
lmm  - quadratic linear mixed model in place of the MGP, then the Cox fit
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import FleetDataset, relabel
from .federation import FedConfig, LoopbackTransport, run_fed_cox, train_joint
from .joint import JointModel, default_horizon, tabulate

IND_SITE = 1


def train_cen_joint(fleet, config: FedConfig, baseline="weibull", mgp_kw=None):
    pooled = FleetDataset([relabel(fleet, 0)])
    model, _ = train_joint(pooled, config, baseline=baseline, method="cen", mgp_kw=mgp_kw,
                           horizon=default_horizon(fleet))
    return model


def _single_site(fleet, site_id):
    site = fleet.site(site_id) if site_id is not None else fleet.sites[0]
    if site.unit_count == 0:
        raise ValueError("training site is empty")
    return FleetDataset([site])


def train_ind_joint(fleet, config: FedConfig, site_id=IND_SITE, baseline="weibull",
                    mgp_kw=None):
    one = _single_site(fleet, site_id)
    model, _ = train_joint(one, config, baseline=baseline, method="ind", mgp_kw=mgp_kw)
    return model


# --- linear mixed model ----------------------------------------------------------------

def _design(t):
    t = np.asarray(t, dtype=float)
    return np.stack([np.ones_like(t), t, t**2], axis=1)


@dataclass
class LmmModel:
    """y = X b + e with b ~ N(a, D), e ~ N(0, s2); X = [1, t, t^2]."""

    a: np.ndarray
    D: np.ndarray
    s2: float
    unit_coefs: dict = field(default_factory=dict)
    ridge_units: list = field(default_factory=list)

    def posterior(self, t, y) -> np.ndarray:
        """Empirical-Bayes coefficients of one unit given its observations."""
        t = np.asarray(t, dtype=float)
        if len(t) == 0:
            return self.a.copy()
        X = _design(t)
        r = np.asarray(y, dtype=float) - X @ self.a
        C = X @ self.D @ X.T + self.s2 * np.eye(len(t))
        return self.a + self.D @ X.T @ np.linalg.solve(C, r)

    def posterior_cov(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if len(t) == 0:
            return self.D.copy()
        X = _design(t)
        C = X @ self.D @ X.T + self.s2 * np.eye(len(t))
        return self.D - self.D @ X.T @ np.linalg.solve(C, X @ self.D)

    def curve(self, b):
        return lambda t: _design(np.atleast_1d(t)) @ b

    def unit_trajectory(self, unit, t_end, step=1.0):
        b = self.posterior(unit.timestamps, unit.signal)
        return tabulate(self.curve(b), max(t_end, unit.event_time), step)


def fit_lmm(units, ridge: float = 1e-8) -> LmmModel:
    """Two-stage fit: unit OLS, moment estimates of (a, D, s2), then EB posteriors."""
    units = list(units)
    if any(u.n_obs < 3 for u in units):
        raise ValueError("each unit needs at least 3 observations")
    coefs, rss, dof, covs, flagged = [], 0.0, 0, [], []
    for u in units:
        X = _design(u.timestamps)
        XtX = X.T @ X
        if np.linalg.matrix_rank(XtX) < 3 or np.linalg.cond(XtX) > 1e14:
            XtX = XtX + ridge * np.trace(XtX) * np.eye(3)
            flagged.append(u.unit_id)
        b = np.linalg.solve(XtX, X.T @ u.signal)
        res = u.signal - X @ b
        rss += float(res @ res)
        dof += max(u.n_obs - 3, 0)
        coefs.append(b)
        covs.append(np.linalg.inv(XtX))
    B = np.array(coefs)
    # population coefficients by pooled least squares
    X_all = np.concatenate([_design(u.timestamps) for u in units])
    y_all = np.concatenate([u.signal for u in units])
    a = np.linalg.lstsq(X_all, y_all, rcond=None)[0]
    s2 = rss / dof if dof > 0 else float(np.var(y_all - X_all @ a))
    s2 = max(s2, 1e-12)
    if len(units) > 1:
        S = np.cov(B.T, ddof=1)
        D = S - s2 * np.mean(covs, axis=0)
        w, V = np.linalg.eigh(0.5 * (D + D.T))
        D = (V * np.clip(w, 0.0, None)) @ V.T
    else:
        D = np.zeros((3, 3))
    model = LmmModel(a, D, s2, ridge_units=flagged)
    for u in units:
        model.unit_coefs[(u.site_id, u.unit_id)] = model.posterior(u.timestamps, u.signal)
    return model


def train_lmm_joint(fleet, config: FedConfig, site_id=IND_SITE, baseline="weibull"):
    one = _single_site(fleet, site_id)
    site = one.sites[0]
    lmm = fit_lmm(site.units)
    t_end = max(float(u.timestamps[-1]) for u in site.units)
    trajs = {(site.site_id, u.unit_id): lmm.unit_trajectory(u, t_end) for u in site.units}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t = LoopbackTransport()
        phi = run_fed_cox(one, trajs, config, t, baseline=baseline)
    return JointModel("lmm", phi, default_horizon(one), t_end, lmm=lmm,
                      info={"ridge_units": lmm.ridge_units})


def train_method(method: str, fleet, config: FedConfig, baseline="weibull", mgp_kw=None,
                 transport=None, site_id=IND_SITE):
    """Dispatch by method name; returns (JointModel, transport messages)."""
    if method == "fed":
        return train_joint(fleet, config, transport, baseline, "fed", mgp_kw)
    if method == "cen":
        return train_cen_joint(fleet, config, baseline, mgp_kw), []
    if method == "ind":
        return train_ind_joint(fleet, config, site_id, baseline, mgp_kw), []
    if method == "lmm":
        return train_lmm_joint(fleet, config, site_id, baseline), []
    raise ValueError(f"unknown method {method!r}")

