"""Convolution-process covariances.

Each output is a sum over latent functions u_i ~ GP(0, RBF(lengthscale_i)),
each smoothed by a scaled Gaussian kernel ``g(tau) = s * N(tau; 0, v^2)``.
Gaussian convolution identities give closed forms; the quadrature oracles
evaluate the defining integrals directly and are used only for checking.

Array functions take an ``xp`` module so the same expressions serve numpy
callers and the JAX objective in :mod:`fedjoint.mgp`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class LatentKernelParams:
    lengthscale: np.ndarray

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if np.any(ell <= 0):
            raise ValueError("lengthscales must be positive")
        object.__setattr__(self, "lengthscale", ell)


@dataclass(frozen=True)
class SmoothingKernelParams:
    """Per-latent (scale, width) of one output's smoothing kernels."""

    scale: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scale, dtype=float))
        v = np.atleast_1d(np.asarray(self.width, dtype=float))
        if s.shape != v.shape:
            raise ValueError("scale and width must have matching shapes")
        if np.any(v <= 0):
            raise ValueError("smoothing widths must be positive")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "width", v)


def latent_cov(z, z2, ell, xp=np):
    return xp.exp(-((z - z2) ** 2) / (2.0 * ell**2))


def cov_f_u(t, z, s, v, ell, xp=np):
    """cov(f(t), u(z)) for one latent function."""
    c = ell**2 + v**2
    return s * xp.sqrt(ell**2 / c) * xp.exp(-((t - z) ** 2) / (2.0 * c))


def cov_f_f(t, t2, s, v, s2, v2, ell, xp=np):
    """cov(f(t), f'(t')) summed over the trailing latent axis of s, v, ell."""
    c = ell**2 + v**2 + v2**2
    terms = s * s2 * xp.sqrt(ell**2 / c) * xp.exp(-((t - t2) ** 2) / (2.0 * c))
    return xp.sum(terms, axis=-1)


# --- quadrature oracles -----------------------------------------------------

class QuadratureError(RuntimeError):
    pass


def _gauss(x, sd):
    return np.exp(-0.5 * (x / sd) ** 2) / (np.sqrt(2.0 * np.pi) * sd)


def _weighted_centre(a, wa, b, wb):
    pa, pb = 1.0 / wa**2, 1.0 / wb**2
    return (pa * a + pb * b) / (pa + pb)


def _quad(fun, lo, hi, points, epsrel):
    pts = sorted(p for p in points if lo < p < hi)
    val, err = integrate.quad(fun, lo, hi, points=pts or None, epsabs=0.0,
                              epsrel=epsrel, limit=400)
    return val, err


def quadrature_oracle_cov_f_u(t, z, s, v, ell, epsrel=1e-11):
    """Numerically integrate g(t - tau) k(z, tau) over tau."""
    if v <= 0 or ell <= 0:
        raise ValueError("width and lengthscale must be positive")
    if s == 0:
        return 0.0
    # the integrand is a Gaussian bump in tau; integrate +/- 40 widths around it
    centre = _weighted_centre(t, v, z, ell)
    w = 1.0 / np.sqrt(1.0 / v**2 + 1.0 / ell**2)
    lo, hi = centre - 40.0 * w, centre + 40.0 * w
    marks = [centre + k * w for k in (-8, -4, -2, -1, 0, 1, 2, 4, 8)]

    def integrand(tau):
        return _gauss(t - tau, v) * latent_cov(z, tau, ell)

    val, err = _quad(integrand, lo, hi, marks, epsrel)
    if not np.isfinite(val) or err > 1e3 * epsrel * abs(val) + 1e-300:
        raise QuadratureError(f"cov_f_u quadrature did not converge (residual {err:.3e})")
    return s * val


def _panel_rule(centre, width, n_panels, order):
    """Composite Gauss-Legendre nodes/weights on centre +/- 16 * width.

    ``centre`` and ``width`` broadcast; the node axis is appended last.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-16.0, 16.0, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wu = (half[:, None] * w[None, :]).ravel()
    centre = np.asarray(centre, dtype=float)[..., None]
    width = np.asarray(width, dtype=float)[..., None]
    return centre + width * u, width * wu


def _double_convolution(t, t2, v, v2, ell, n_panels):
    # outer variable tau: g(t - tau) times the inner integral, whose width in
    # tau is sqrt(ell^2 + v2^2) around t2
    w_out = 1.0 / np.sqrt(1.0 / v**2 + 1.0 / (ell**2 + v2**2))
    c_out = _weighted_centre(t, v, t2, np.sqrt(ell**2 + v2**2))
    tau, wt = _panel_rule(c_out, w_out, n_panels, 24)
    # inner variable tau' for every outer node
    w_in = 1.0 / np.sqrt(1.0 / v2**2 + 1.0 / ell**2)
    c_in = _weighted_centre(t2, v2, tau, ell)
    tp, wtp = _panel_rule(c_in, w_in, n_panels, 24)
    inner = np.sum(wtp * _gauss(t2 - tp, v2) * latent_cov(tau[:, None], tp, ell), axis=-1)
    return np.sum(wt * _gauss(t - tau, v) * inner)


def quadrature_oracle_cov_f_f(t, t2, s, v, s2, v2, ell, rtol=1e-10):
    """Numerically integrate g(t-tau) g'(t'-tau') k(tau, tau') over both arguments.

    Nested composite Gauss-Legendre rules placed on each integrand's peak; the
    residual is estimated against a rule with half the panels.  Scalars
    describe one latent function; arrays sum over latents.
    """
    s, v, s2, v2, ell = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (s, v, s2, v2, ell))
    if np.any(v <= 0) or np.any(v2 <= 0) or np.any(ell <= 0):
        raise ValueError("widths and lengthscales must be positive")
    total = 0.0
    for si, vi, s2i, v2i, li in zip(s, v, s2, v2, ell):
        if si == 0 or s2i == 0:
            continue
        fine = _double_convolution(t, t2, vi, v2i, li, 8)
        coarse = _double_convolution(t, t2, vi, v2i, li, 4)
        err = abs(fine - coarse)
        if not np.isfinite(fine) or err > rtol * abs(fine) + 1e-300:
            raise QuadratureError(f"cov_f_f quadrature did not converge (residual {err:.3e})")
        total += si * s2i * fine
    return total


# --- matrix assembly --------------------------------------------------------

class CholeskyError(np.linalg.LinAlgError):
    pass


def jittered_cholesky(K):
    """Cholesky with a jitter ladder 1e-8..1e-2 times the mean diagonal."""
    K = np.asarray(K, dtype=float)
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    scale = scale if scale > 0 else 1.0
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * scale * np.eye(len(K))), jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CholeskyError("matrix not positive definite after maximum jitter")


def build_uu(z, latent: LatentKernelParams, jitter=JITTER_START):
    """Block-diagonal K_uu; ``z`` is a list of per-latent inducing inputs."""
    blocks = []
    for zi, li in zip(z, latent.lengthscale):
        zi = np.asarray(zi, dtype=float)
        Kb = latent_cov(zi[:, None], zi[None, :], li)
        blocks.append(Kb + jitter * np.eye(len(zi)))
    size = sum(len(b) for b in blocks)
    K = np.zeros((size, size))
    pos = 0
    for b in blocks:
        n = len(b)
        K[pos : pos + n, pos : pos + n] = b
        pos += n
    return K


def build_fu(t, z, smooth: SmoothingKernelParams, latent: LatentKernelParams):
    t = np.asarray(t, dtype=float)
    cols = [cov_f_u(t[:, None], np.asarray(zi, dtype=float)[None, :], si, vi, li)
            for zi, si, vi, li in zip(z, smooth.scale, smooth.width, latent.lengthscale)]
    return np.concatenate(cols, axis=1)


def build_ff(t, smooth: SmoothingKernelParams, latent: LatentKernelParams,
             t2=None, smooth2: SmoothingKernelParams | None = None):
    t = np.asarray(t, dtype=float)
    t2 = t if t2 is None else np.asarray(t2, dtype=float)
    smooth2 = smooth if smooth2 is None else smooth2
    return cov_f_f(t[:, None, None], t2[None, :, None], smooth.scale, smooth.width,
                   smooth2.scale, smooth2.width, latent.lengthscale)


def build_cov_matrix(inputs, latent: LatentKernelParams, kind: str,
                     smooth: SmoothingKernelParams | None = None, z=None,
                     jitter=JITTER_START):
    """Assemble K_uu, K_fu or K_ff.

    For ``kind="uu"`` ``inputs`` is the list of per-latent inducing inputs; for
    ``"fu"`` it is the output's timestamps and ``z`` the inducing inputs; for
    ``"ff"`` it is the output's timestamps.  K_uu is checked for positive
    definiteness with the jitter ladder.
    """
    if kind == "uu":
        K = build_uu(inputs, latent, jitter=jitter)
        jittered_cholesky(K)
        return K
    if smooth is None:
        raise ValueError(f"kind={kind!r} needs smoothing parameters")
    if kind == "fu":
        return build_fu(inputs, z, smooth, latent)
    if kind == "ff":
        return build_ff(inputs, smooth, latent)
    raise ValueError(f"unknown kind {kind!r}")
