"""Sparse inducing-point multi-output GP over units at many sites.

Global parameters (shared through the server): latent lengthscales and the
variational posterior q(u) = prod_i N(mu_i, Psi_i).  Site parameters (never
leave the site): per-unit smoothing scale/width per latent and noise level.

The ELBO and its gradients are evaluated with JAX in float64; prediction and
the exact marginal likelihood use plain numpy so the two paths stay
independent of each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import jax
import numpy as np

jax.config.update("jax_enable_x64", True)
import jax.numpy as jnp  # noqa: E402
import jax.scipy.linalg as jsl  # noqa: E402

from . import kernels  # noqa: E402

LOG2PI = float(np.log(2.0 * np.pi))
DEFAULT_JITTER = 1e-6
CHECKPOINT_FORMAT = "fedjoint-mgp-checkpoint"
CHECKPOINT_VERSION = 1


# --- state -------------------------------------------------------------------

@dataclass
class SiteParams:
    """Per-unit kernel and noise parameters of one site."""

    unit_ids: list
    scale: np.ndarray      # (M, I)
    log_width: np.ndarray  # (M, I)
    log_sigma: np.ndarray  # (M,)

    def as_tree(self):
        return {"scale": self.scale, "log_width": self.log_width, "log_sigma": self.log_sigma}

    @classmethod
    def from_tree(cls, unit_ids, tree):
        return cls(list(unit_ids), np.array(tree["scale"], dtype=float),
                   np.array(tree["log_width"], dtype=float),
                   np.array(tree["log_sigma"], dtype=float))

    def unit(self, idx: int) -> "UnitParams":
        return UnitParams(self.scale[idx].copy(), self.log_width[idx].copy(),
                          float(self.log_sigma[idx]))

    def mean_unit(self) -> "UnitParams":
        return UnitParams(self.scale.mean(axis=0), self.log_width.mean(axis=0),
                          float(self.log_sigma.mean()))


@dataclass
class UnitParams:
    scale: np.ndarray
    log_width: np.ndarray
    log_sigma: float

    @property
    def smoothing(self) -> kernels.SmoothingKernelParams:
        return kernels.SmoothingKernelParams(self.scale, np.exp(self.log_width))

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))


@dataclass
class MGPState:
    z: np.ndarray           # (I, P) inducing inputs, fixed
    log_ell: np.ndarray     # (I,)
    mu: np.ndarray          # (I, P)
    psi: np.ndarray         # (I, P, P)
    sites: dict = field(default_factory=dict)
    jitter: float = DEFAULT_JITTER

    @property
    def n_latent(self) -> int:
        return self.z.shape[0]

    @property
    def latent(self) -> kernels.LatentKernelParams:
        return kernels.LatentKernelParams(np.exp(self.log_ell))

    def global_tree(self):
        return {"log_ell": self.log_ell, "mu": self.mu, "psi": self.psi}

    def with_global(self, tree) -> "MGPState":
        return MGPState(self.z, np.array(tree["log_ell"], dtype=float),
                        np.array(tree["mu"], dtype=float), np.array(tree["psi"], dtype=float),
                        dict(self.sites), self.jitter)

    def kuu(self) -> np.ndarray:
        ell = np.exp(self.log_ell)
        d = self.z[:, :, None] - self.z[:, None, :]
        K = np.exp(-(d**2) / (2.0 * ell[:, None, None] ** 2))
        return K + self.jitter * np.eye(self.z.shape[1])[None]

    def unit_params(self, site_id: int, unit_id: int) -> UnitParams:
        sp = self.sites[site_id]
        return sp.unit(sp.unit_ids.index(unit_id))


# --- batching ----------------------------------------------------------------

@dataclass
class SiteBatch:
    """Units of one site padded to a common length with an observation mask."""

    t: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    unit_ids: list

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())


def pad_length(n: int, multiple: int = 8) -> int:
    return max(multiple, int(np.ceil(n / multiple)) * multiple)


def make_batch(units, length: int | None = None) -> SiteBatch:
    units = list(units)
    n = max([u.n_obs for u in units] + [1])
    length = pad_length(n) if length is None else max(length, n)
    M = len(units)
    t = np.zeros((M, length))
    y = np.zeros((M, length))
    mask = np.zeros((M, length))
    for m, u in enumerate(units):
        L = u.n_obs
        t[m, :L] = u.timestamps
        y[m, :L] = u.signal
        mask[m, :L] = 1.0
        if L < length:
            # padded inputs sit on the last observed time; masked out anyway
            t[m, L:] = u.timestamps[-1] if L else 0.0
    return SiteBatch(t, y, mask, [u.unit_id for u in units])


# --- JAX objective -------------------------------------------------------------

def _kuu_j(log_ell, z, jitter):
    ell = jnp.exp(log_ell)
    d = z[:, :, None] - z[:, None, :]
    K = jnp.exp(-(d**2) / (2.0 * ell[:, None, None] ** 2))
    return K + jitter * jnp.eye(z.shape[1])[None]


def _qf_moments(glob, loc, z, t, jitter):
    """Mean and marginal variance of q(f) at padded inputs t (M, L)."""
    ell = jnp.exp(glob["log_ell"])                       # (I,)
    v = jnp.exp(loc["log_width"])                         # (M, I)
    s = loc["scale"]                                      # (M, I)
    c = ell[None, :] ** 2 + v**2                          # (M, I)
    kfu = (s * jnp.sqrt(ell[None, :] ** 2 / c))[:, None, :, None] * jnp.exp(
        -((t[:, :, None, None] - z[None, None]) ** 2) / (2.0 * c[:, None, :, None]))  # (M,L,I,P)
    K = _kuu_j(glob["log_ell"], z, jitter)
    Lk = jnp.linalg.cholesky(K)                           # (I,P,P)
    psi = 0.5 * (glob["psi"] + jnp.swapaxes(glob["psi"], -1, -2))
    alpha = jax.vmap(lambda L_, b: jsl.cho_solve((L_, True), b))(Lk, glob["mu"])  # (I,P)
    mean = jnp.einsum("mlip,ip->ml", kfu, alpha)
    # rows of W are K^{-1} k_{u, f(t)} per latent
    M, L, I, P = kfu.shape
    kf = jnp.transpose(kfu, (2, 0, 1, 3)).reshape(I, M * L, P)
    W = jax.vmap(lambda L_, B: jsl.cho_solve((L_, True), B.T).T)(Lk, kf)
    W = jnp.transpose(W.reshape(I, M, L, P), (1, 2, 0, 3))
    psiW = jnp.einsum("ipq,mliq->mlip", psi, W)
    quad = jnp.sum(W * psiW, axis=(-1, -2)) - jnp.sum(W * kfu, axis=(-1, -2))
    kff = jnp.sum(s**2 * jnp.sqrt(ell[None, :] ** 2 / (ell[None, :] ** 2 + 2.0 * v**2)), axis=-1)
    var = kff[:, None] + quad
    return mean, var


def _expected_loglik_units(glob, loc, z, t, y, mask, jitter):
    mean, var = _qf_moments(glob, loc, z, t, jitter)
    sig2 = jnp.exp(2.0 * loc["log_sigma"])[:, None]
    terms = -0.5 * (LOG2PI + jnp.log(sig2)) - ((y - mean) ** 2 + var) / (2.0 * sig2)
    return jnp.sum(terms * mask, axis=1)


def _kl_latents(glob, z, jitter):
    K = _kuu_j(glob["log_ell"], z, jitter)
    Lk = jnp.linalg.cholesky(K)
    psi = 0.5 * (glob["psi"] + jnp.swapaxes(glob["psi"], -1, -2))
    Lp = jnp.linalg.cholesky(psi)
    P = z.shape[1]

    def one(L_, Lp_, mu, ps):
        Kinv_psi = jsl.cho_solve((L_, True), ps)
        Kinv_mu = jsl.cho_solve((L_, True), mu)
        logdet_k = 2.0 * jnp.sum(jnp.log(jnp.diag(L_)))
        logdet_p = 2.0 * jnp.sum(jnp.log(jnp.diag(Lp_)))
        return 0.5 * (jnp.trace(Kinv_psi) + mu @ Kinv_mu - P + logdet_k - logdet_p)

    return jax.vmap(one)(Lk, Lp, glob["mu"], psi)


def _neg_local_elbo(glob, loc, z, t, y, mask, r, jitter):
    return -jnp.sum(_expected_loglik_units(glob, loc, z, t, y, mask, jitter)) + r * jnp.sum(
        _kl_latents(glob, z, jitter))


_neg_local_elbo_jit = jax.jit(_neg_local_elbo)
_neg_local_elbo_grad = jax.jit(jax.value_and_grad(_neg_local_elbo, argnums=(0, 1)))
_kl_jit = jax.jit(_kl_latents)
_ell_units_jit = jax.jit(_expected_loglik_units)


def _unit_objective(loc1, glob, z, t, y, mask, jitter):
    loc = jax.tree_util.tree_map(lambda a: a[None], loc1)
    return -jnp.sum(_expected_loglik_units(glob, loc, z, t[None], y[None], mask[None], jitter))


_unit_objective_grad = jax.jit(jax.value_and_grad(_unit_objective))


def _as_jax(tree):
    return jax.tree_util.tree_map(jnp.asarray, tree)


def _as_numpy(tree):
    return jax.tree_util.tree_map(lambda a: np.array(a, dtype=float), tree)


def neg_local_elbo_and_grad(glob, loc, z, batch: SiteBatch, r, jitter):
    """Value and (global, local) gradients of the negative site ELBO term."""
    val, (g_glob, g_loc) = _neg_local_elbo_grad(
        _as_jax(glob), _as_jax(loc), jnp.asarray(z), jnp.asarray(batch.t),
        jnp.asarray(batch.y), jnp.asarray(batch.mask), float(r), float(jitter))
    return float(val), _as_numpy(g_glob), _as_numpy(g_loc)


# --- public evaluation API -------------------------------------------------------

def observation_weights(batches) -> np.ndarray:
    counts = np.array([b.n_obs for b in batches], dtype=float)
    return counts / counts.sum()


def expected_loglik_term(unit, params: UnitParams, state: MGPState) -> float:
    """E_q(f)[log p(y | f)] for one unit."""
    b = make_batch([unit])
    loc = {"scale": params.scale[None], "log_width": params.log_width[None],
           "log_sigma": np.array([params.log_sigma])}
    out = _ell_units_jit(_as_jax(state.global_tree()), _as_jax(loc), jnp.asarray(state.z),
                         jnp.asarray(b.t), jnp.asarray(b.y), jnp.asarray(b.mask), state.jitter)
    return float(out[0])


def kl_q_p(state: MGPState) -> float:
    return float(jnp.sum(_kl_jit(_as_jax(state.global_tree()), jnp.asarray(state.z), state.jitter)))


def local_elbo(site, state: MGPState, r: float) -> float:
    b = make_batch(site.units)
    loc = state.sites[site.site_id].as_tree()
    return -float(_neg_local_elbo_jit(
        _as_jax(state.global_tree()), _as_jax(loc), jnp.asarray(state.z), jnp.asarray(b.t),
        jnp.asarray(b.y), jnp.asarray(b.mask), float(r), state.jitter))


def elbo(fleet, state: MGPState) -> float:
    """Monolithic ELBO: all units in one batch, KL counted once."""
    units = [u for s in fleet.sites for u in s.units]
    b = make_batch(units)
    loc = {
        "scale": np.concatenate([state.sites[s.site_id].scale for s in fleet.sites]),
        "log_width": np.concatenate([state.sites[s.site_id].log_width for s in fleet.sites]),
        "log_sigma": np.concatenate([state.sites[s.site_id].log_sigma for s in fleet.sites]),
    }
    ell_sum = jnp.sum(_ell_units_jit(_as_jax(state.global_tree()), _as_jax(loc),
                                     jnp.asarray(state.z), jnp.asarray(b.t), jnp.asarray(b.y),
                                     jnp.asarray(b.mask), state.jitter))
    return float(ell_sum) - kl_q_p(state)


# --- numpy linear algebra for prediction ----------------------------------------

def _block_diag(blocks):
    n = sum(len(b) for b in blocks)
    out = np.zeros((n, n))
    pos = 0
    for b in blocks:
        out[pos : pos + len(b), pos : pos + len(b)] = b
        pos += len(b)
    return out


def _z_list(state):
    return [state.z[i] for i in range(state.n_latent)]


def unit_kfu(t, params: UnitParams, state: MGPState):
    return kernels.build_fu(t, _z_list(state), params.smoothing, state.latent)


def unit_kff(t, params: UnitParams, state: MGPState, t2=None):
    return kernels.build_ff(t, params.smoothing, state.latent, t2=t2)


def unit_kff_diag(params: UnitParams, state: MGPState):
    ell = np.exp(state.log_ell)
    v = np.exp(params.log_width)
    return float(np.sum(params.scale**2 * np.sqrt(ell**2 / (ell**2 + 2.0 * v**2))))


@dataclass
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self):
        return np.diag(self.cov) if self.cov.ndim == 2 else self.cov


def conditional_f_given_u(t, u, params: UnitParams, state: MGPState) -> Gaussian:
    """p(f | u) at inputs t for one unit."""
    K = _block_diag(state.kuu())
    kfu = unit_kfu(t, params, state)
    A = np.linalg.solve(K, kfu.T).T
    mean = A @ np.asarray(u).reshape(-1)
    cov = unit_kff(t, params, state) - A @ kfu.T
    return Gaussian(mean, 0.5 * (cov + cov.T))


def q_f(t, params: UnitParams, state: MGPState, t2=None):
    """Joint q(f) moments: mean at t, covariance between t and t2."""
    t = np.asarray(t, dtype=float)
    K = _block_diag(state.kuu())
    Kc = np.linalg.cholesky(K)
    psi = _block_diag(state.psi)
    mu = state.mu.reshape(-1)
    k1 = unit_kfu(t, params, state)
    A1 = _cho_solve(Kc, k1.T).T
    mean = A1 @ mu
    if t2 is None:
        k2, A2, t2 = k1, A1, t
    else:
        t2 = np.asarray(t2, dtype=float)
        k2 = unit_kfu(t2, params, state)
        A2 = _cho_solve(Kc, k2.T).T
    cov = unit_kff(t, params, state, t2=t2) + A1 @ psi @ A2.T - A1 @ k2.T
    return mean, cov


def _cho_solve(Lc, B):
    from scipy.linalg import cho_solve

    return cho_solve((Lc, True), B)


def predict_f(t_star, params: UnitParams, state: MGPState, var_floor=-1e-10) -> Gaussian:
    """Predictive mean and variance at t_star from q(u) alone."""
    t_star = np.asarray(t_star, dtype=float)
    K = _block_diag(state.kuu())
    Kc = np.linalg.cholesky(K)
    psi = _block_diag(state.psi)
    ks = unit_kfu(t_star, params, state)
    A = _cho_solve(Kc, ks.T).T
    mean = A @ state.mu.reshape(-1)
    var = unit_kff_diag(params, state) + np.einsum("np,pq,nq->n", A, psi, A) - np.sum(A * ks, axis=1)
    if np.any(var < var_floor):
        raise FloatingPointError(f"negative predictive variance {var.min():.3e}")
    return Gaussian(mean, np.maximum(var, 0.0))


def marginal_loglik(fleet, state: MGPState) -> float:
    """log N(y; 0, Omega + K_fu K_uu^-1 K_uf + Sigma) over every unit."""
    K = _block_diag(state.kuu())
    Kc = np.linalg.cholesky(K)
    kfus, omegas, noise, ys = [], [], [], []
    for s in fleet.sites:
        sp = state.sites[s.site_id]
        for m, u in enumerate(s.units):
            p = sp.unit(m)
            kfu = unit_kfu(u.timestamps, p, state)
            A = _cho_solve(Kc, kfu.T).T
            omegas.append(unit_kff(u.timestamps, p, state) - A @ kfu.T)
            kfus.append(kfu)
            noise.append(np.full(u.n_obs, p.sigma**2))
            ys.append(u.signal)
    kfu = np.concatenate(kfus)
    cov = _block_diag(omegas) + kfu @ _cho_solve(Kc, kfu.T) + np.diag(np.concatenate(noise))
    y = np.concatenate(ys)
    C = np.linalg.cholesky(0.5 * (cov + cov.T))
    a = np.linalg.solve(C, y)
    return float(-0.5 * (a @ a) - np.sum(np.log(np.diag(C))) - 0.5 * len(y) * LOG2PI)


def omega_blocks(fleet, state: MGPState):
    """Per-unit conditional covariances making up the block-diagonal Omega."""
    out = []
    for s in fleet.sites:
        sp = state.sites[s.site_id]
        for m, u in enumerate(s.units):
            g = conditional_f_given_u(u.timestamps, np.zeros(state.z.size), sp.unit(m), state)
            out.append(((s.site_id, u.unit_id), g.cov))
    return out


# --- initialisation ---------------------------------------------------------------

def init_state(fleet, n_latent: int = 2, n_inducing: int = 16, time_max: float | None = None,
               jitter: float = DEFAULT_JITTER) -> MGPState:
    """Scale-aware initialisation; q(u) starts at the prior."""
    if time_max is None:
        time_max = max(float(u.timestamps[-1]) for s in fleet.sites for u in s.units if u.n_obs)
    z = np.tile(np.linspace(0.0, time_max, n_inducing), (n_latent, 1))
    # distinct lengthscales around 20% of the range break the latent symmetry
    spread = np.linspace(0.5, 1.5, n_latent) if n_latent > 1 else np.ones(1)
    log_ell = np.log(0.2 * time_max * spread)
    state = MGPState(z, log_ell, np.zeros_like(z), np.zeros((n_latent, n_inducing, n_inducing)),
                     jitter=jitter)
    state.psi = state.kuu()
    for s in fleet.sites:
        state.sites[s.site_id] = init_site_params(s.units, n_latent, time_max)
    return state


def init_sigma(unit) -> float:
    if unit.n_obs > 2:
        sd = float(np.std(np.diff(unit.signal))) / np.sqrt(2.0)
        if sd > 0:
            return sd
    return 0.1 * max(float(np.std(unit.signal)), 1e-3) if unit.n_obs > 1 else 0.1


def init_site_params(units, n_latent, time_max) -> SiteParams:
    M = len(units)
    return SiteParams(
        [u.unit_id for u in units],
        np.ones((M, n_latent)),
        np.full((M, n_latent), np.log(0.05 * time_max)),
        np.log([init_sigma(u) for u in units]) if M else np.zeros(0),
    )


# --- test-time adaptation ------------------------------------------------------------

@dataclass
class UnitPredictor:
    """Predictive distribution of one unit's latent signal.

    With observations, q(f) at new inputs is conditioned on the unit's own
    noisy observations through the joint Gaussian of (f_new, f_obs) under q(u).
    """

    params: UnitParams
    state: MGPState
    t_obs: np.ndarray
    y_obs: np.ndarray
    fallback: bool = False

    def predict(self, t_star) -> Gaussian:
        t_star = np.asarray(t_star, dtype=float)
        if len(self.t_obs) == 0:
            return predict_f(t_star, self.params, self.state)
        m_s, c_so = q_f(t_star, self.params, self.state, t2=self.t_obs)
        m_o, c_oo = q_f(self.t_obs, self.params, self.state)
        c_oo = 0.5 * (c_oo + c_oo.T) + self.params.sigma**2 * np.eye(len(self.t_obs))
        Lc = np.linalg.cholesky(c_oo)
        resid = _cho_solve(Lc, self.y_obs - m_o)
        mean = m_s + c_so @ resid
        prior = predict_f(t_star, self.params, self.state).var
        G = np.linalg.solve(Lc, c_so.T)
        var = prior - np.sum(G**2, axis=0)
        return Gaussian(mean, np.maximum(var, 0.0))

    def mean(self, t_star) -> np.ndarray:
        return self.predict(t_star).mean


def unit_param_prior(state: MGPState, sd_floor: float = 0.1):
    """(mean, sd) of the trained units' (scale, log_width, log_sigma) vectors."""
    rows = [np.concatenate([sp.scale, sp.log_width, sp.log_sigma[:, None]], axis=1)
            for sp in state.sites.values() if len(sp.unit_ids)]
    if not rows:
        return None
    X = np.concatenate(rows)
    sd = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
    return X.mean(axis=0), np.maximum(sd, sd_floor)


def adapt_test_unit(unit, state: MGPState, init: UnitParams | None = None,
                    maxiter: int = 200, length: int | None = None,
                    prior=None) -> UnitPredictor:
    """Fit a new unit's kernel/noise parameters with the global parameters frozen.

    ``prior`` = (mean, sd) adds an independent Gaussian penalty on the
    parameter vector, turning the fit into a MAP estimate.
    """
    from scipy.optimize import minimize

    I = state.n_latent
    if init is None:
        means = [sp.mean_unit() for sp in state.sites.values() if len(sp.unit_ids)]
        if means:
            init = UnitParams(np.mean([m.scale for m in means], axis=0),
                              np.mean([m.log_width for m in means], axis=0),
                              float(np.mean([m.log_sigma for m in means])))
        else:
            init = UnitParams(np.ones(I), np.zeros(I), 0.0)
    if unit.n_obs == 0:
        return UnitPredictor(init, state, np.zeros(0), np.zeros(0))
    b = make_batch([unit], length=length)
    glob = _as_jax(state.global_tree())
    args = (glob, jnp.asarray(state.z), jnp.asarray(b.t[0]), jnp.asarray(b.y[0]),
            jnp.asarray(b.mask[0]), state.jitter)

    def unpack(x):
        return {"scale": x[:I], "log_width": x[I : 2 * I], "log_sigma": x[2 * I]}

    def fun(x):
        val, g = _unit_objective_grad(_as_jax(unpack(x)), *args)
        g = np.concatenate([np.asarray(g["scale"]), np.asarray(g["log_width"]),
                            np.atleast_1d(np.asarray(g["log_sigma"]))])
        val = float(val)
        if prior is not None:
            r = (x - prior[0]) / prior[1]
            val += 0.5 * float(r @ r)
            g = g + r / prior[1]
        return val, g

    x0 = np.concatenate([init.scale, init.log_width, [init.log_sigma]])
    fallback = False
    try:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
        x = res.x
        if not np.all(np.isfinite(x)) or not np.isfinite(res.fun) or res.fun > fun(x0)[0]:
            raise FloatingPointError("adaptation diverged")
        params = UnitParams(x[:I].copy(), x[I : 2 * I].copy(), float(x[2 * I]))
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        params, fallback = init, True
    return UnitPredictor(params, state, unit.timestamps.copy(), unit.signal.copy(), fallback)


def unit_predictor(unit, state: MGPState, site_id: int | None = None) -> UnitPredictor:
    """Predictor for a training unit using its trained site parameters."""
    sid = unit.site_id if site_id is None else site_id
    params = state.unit_params(sid, unit.unit_id)
    return UnitPredictor(params, state, unit.timestamps.copy(), unit.signal.copy())


# --- checkpoint ---------------------------------------------------------------------

def _enc(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": [format(x, ".17g") for x in a.reshape(-1)]}


def _dec(d) -> np.ndarray:
    return np.array([float(x) for x in d["values"]], dtype=float).reshape(d["shape"])


def state_to_dict(state: MGPState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "jitter": format(state.jitter, ".17g"),
        "inducing_inputs": _enc(state.z),
        "global": {k: _enc(v) for k, v in state.global_tree().items()},
        "sites": [
            {"site_id": sid, "unit_ids": list(map(int, sp.unit_ids)),
             **{k: _enc(v) for k, v in sp.as_tree().items()}}
            for sid, sp in sorted(state.sites.items())
        ],
    }


def state_from_dict(d: dict) -> MGPState:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an MGP checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    g = d["global"]
    state = MGPState(_dec(d["inducing_inputs"]), _dec(g["log_ell"]), _dec(g["mu"]),
                     _dec(g["psi"]), jitter=float(d["jitter"]))
    for s in d["sites"]:
        state.sites[int(s["site_id"])] = SiteParams.from_tree(
            s["unit_ids"], {k: _dec(s[k]) for k in ("scale", "log_width", "log_sigma")})
    return state


def save_checkpoint(state: MGPState, path) -> None:
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=1)


def load_checkpoint(path) -> MGPState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))
