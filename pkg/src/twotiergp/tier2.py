"""Two-tier prediction: propagate tier-1 uncertainty through the top GP.

Given the tier-1 posterior ``z_* ~ N(nu, t^2)`` for each manipulated factor,
the predictive moments of ``f(x_*, z_*)`` are

    mean = ytil' (cx * ct_1 * ... * ct_m)
    var  = s + sum_ij Q_ij cx_i cx_j prod_k Ct_k[i, j] - mean^2

with ``ytil = A^{-1} y``, ``Q = ytil ytil' - A^{-1}``, ``A = noise I + C``,
``s`` the top-tier signal variance (one on standardized targets),
``ct_k[i] = E c_k(z_ik, Z_k)`` and ``Ct_k[i, j] = E c_k(z_ik, Z_k) c_k(z_jk, Z_k)``.
The expectations have closed forms for both kernel families; see
``MATH_NOTES.md`` for the derivation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InputError
from .gp_core import GaussianPredictive, GpModel, gp_fit
from .kernels import KernelFamily, scaled_distance
from .tier1 import Tier1Model, tier1_fit, tier1_predict_batch

logger = logging.getLogger(__name__)

NEGATIVE_VARIANCE_TOL = 1e-8


# -- scalar/vector entry points for the propagation integrals ---------------


def ctilde_exp(z_train, nu_star: float, t_star: float, b_z: float) -> np.ndarray:
    """E exp(-|z_i - Z| / b_z) for Z ~ N(nu_star, t_star^2), per training z_i."""
    _check_scales(t_star, b_z)
    return _backend.ctilde_vector(np.atleast_1d(np.asarray(z_train, float)), nu_star, t_star, b_z, 0)


def ctilde_sqexp(z_train, nu_star: float, t_star: float, b_z: float) -> np.ndarray:
    """E exp(-(z_i - Z)^2 / (2 b_z^2)) for Z ~ N(nu_star, t_star^2)."""
    _check_scales(t_star, b_z)
    return _backend.ctilde_vector(np.atleast_1d(np.asarray(z_train, float)), nu_star, t_star, b_z, 1)


def ctilde2_exp(z_i: float, z_j: float, nu_star: float, t_star: float, b_z: float) -> float:
    """E exp(-(|z_i - Z| + |z_j - Z|) / b_z) for Z ~ N(nu_star, t_star^2)."""
    _check_scales(t_star, b_z)
    return float(_backend.ctilde_matrix(np.array([z_i, z_j], float), nu_star, t_star, b_z, 0)[0, 1])


def ctilde2_sqexp(z_i: float, z_j: float, nu_star: float, t_star: float, b_z: float) -> float:
    """E exp(-((z_i - Z)^2 + (z_j - Z)^2) / (2 b_z^2)) for Z ~ N(nu_star, t_star^2)."""
    _check_scales(t_star, b_z)
    return float(_backend.ctilde_matrix(np.array([z_i, z_j], float), nu_star, t_star, b_z, 1)[0, 1])


def _check_scales(t_star, b_z):
    if not t_star >= 0:
        raise InputError(f"t_star must be nonnegative, got {t_star}")
    if not b_z > 0:
        raise InputError(f"b_z must be positive, got {b_z}")


# -- the model ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoTierModel:
    """Top-tier GP over ``(x, z_1..z_m)`` bound to one tier-1 model per factor."""

    top: GpModel
    tier1s: tuple
    q_matrix: np.ndarray
    n_x: int

    @property
    def n_factors(self) -> int:
        return len(self.tier1s)

    @property
    def family(self) -> KernelFamily:
        return self.top.kernel.family

    def to_dict(self) -> dict:
        return {
            "n_x": self.n_x,
            "top": self.top.to_dict(),
            "tier1": [t.to_dict() for t in self.tier1s],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoTierModel":
        top = GpModel.from_dict(d["top"])
        tier1s = tuple(Tier1Model.from_dict(t) for t in d["tier1"])
        return _assemble(top, tier1s, d["n_x"])


def _assemble(top: GpModel, tier1s, n_x: int) -> TwoTierModel:
    tier1s = tuple(tier1s)
    m = len(tier1s)
    if m < 1:
        raise InputError("a two-tier model needs at least one tier-1 model")
    if top.ndim != n_x + m:
        raise InputError(f"top GP has {top.ndim} inputs, expected {n_x} x-columns + {m} factors")
    ytil = top.weights
    Q = np.outer(ytil, ytil) - top.precision()
    Q = 0.5 * (Q + Q.T)
    return TwoTierModel(top=top, tier1s=tier1s, q_matrix=Q, n_x=n_x)


def twotier_fit(
    x,
    z,
    y,
    tier1s=None,
    u=None,
    omega=None,
    kernel_family="exp",
    degree: int = 5,
    restarts: int = 8,
    seed: int = 0,
    standardize_inputs: bool = False,
    tier1_kernel_family=None,
) -> TwoTierModel:
    """Fit the top-tier GP and bind it to tier-1 models.

    Parameters
    ----------
    x : array (N, d_x) or None
        Main factors that are set directly.
    z : array (N,) or (N, m)
        Observed values of the manipulated main factors.
    y : array (N,)
        Responses.
    tier1s : sequence of Tier1Model, optional
        Already fitted tier-1 models, one per column of ``z``. When omitted
        they are fitted here from ``u`` and ``omega`` (lists, one entry per
        factor; a bare array is accepted for a single factor).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    N, m = z.shape
    y = np.asarray(y, dtype=float).ravel()
    if x is None:
        x = np.empty((N, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != N or y.size != N:
        raise InputError("x, z and y must have the same number of rows")

    if tier1s is None:
        if u is None or omega is None:
            raise InputError("pass fitted tier1s or the u/omega data to fit them")
        if m == 1 and not isinstance(u, (list, tuple)):
            u, omega = [u], [omega]
        if len(u) != m or len(omega) != m:
            raise InputError(f"need u and omega for each of the {m} manipulated factors")
        fam1 = kernel_family if tier1_kernel_family is None else tier1_kernel_family
        tier1s = [
            tier1_fit(u[j], omega[j], z[:, j], Q=degree, kernel_family=fam1, restarts=restarts, seed=seed + j)
            for j in range(m)
        ]
    if len(tier1s) != m:
        raise InputError(f"{len(tier1s)} tier-1 models for {m} manipulated factors")

    top = gp_fit(
        np.hstack([x, z]),
        y,
        kernel_family=kernel_family,
        restarts=restarts,
        seed=seed,
        standardize=True,
        standardize_inputs=standardize_inputs,
    )
    return _assemble(top, tier1s, x.shape[1])


# -- prediction ----------------------------------------------------------------


def _split_queries(model: TwoTierModel, x_star, u_star, omega_star):
    """Normalize query arguments to (X (T, d_x), [u_j (T, p_j)], [omega_j (T,)])."""
    m = model.n_factors
    if m == 1 and not isinstance(u_star, (list, tuple)):
        u_star, omega_star = [u_star], [omega_star]
    if not isinstance(omega_star, (list, tuple)):
        omega_star = [omega_star]
    if len(u_star) != m or len(omega_star) != m:
        raise InputError(
            f"model has {m} manipulated factor(s) but got {len(u_star)} u and {len(omega_star)} omega entries"
        )
    omegas = [np.atleast_1d(np.asarray(o, dtype=float)).ravel() for o in omega_star]
    T = omegas[0].size
    us = []
    for j, uj in enumerate(u_star):
        p = model.tier1s[j].train_u.shape[1]
        uj = np.asarray(uj, dtype=float)
        uj = uj.reshape(T, p)
        us.append(uj)
    if x_star is None or model.n_x == 0:
        X = np.empty((T, 0))
    else:
        X = np.asarray(x_star, dtype=float).reshape(T, model.n_x)
    return X, us, omegas


def _tier1_moments(model: TwoTierModel, us, omegas):
    """Tier-1 posterior (nu, t) per factor, mapped onto the top GP's input axes."""
    nus, ts = [], []
    shift, scale = model.top.input_shift, model.top.input_scale
    for j, t1 in enumerate(model.tier1s):
        nu, t2 = tier1_predict_batch(t1, us[j], omegas[j])
        t = np.sqrt(t2)
        if shift is not None:
            col = model.n_x + j
            nu = (nu - shift[col]) / scale[col]
            t = t / scale[col]
        nus.append(nu)
        ts.append(t)
    return nus, ts


def _x_covariance(model: TwoTierModel, X):
    """Signal variance times the x-part kernel, shape (T, N)."""
    top = model.top
    s = top.kernel.signal_variance
    if model.n_x == 0:
        return np.full((X.shape[0], top.n_train), s)
    Xi = X
    if top.input_shift is not None:
        Xi = (X - top.input_shift[: model.n_x]) / top.input_scale[: model.n_x]
    kx = top.kernel.subset(range(model.n_x))
    return s * np.exp(-scaled_distance(kx, Xi, top.train_inputs[:, : model.n_x]))


def _propagated_moments(model: TwoTierModel, X, nus, ts, with_variance=True):
    """Standardized-scale mean and variance for each query row."""
    top = model.top
    fam = model.family.code
    ell = top.kernel.length_scales
    CX = _x_covariance(model, X)
    prod = CX.copy()
    for j in range(model.n_factors):
        zj = top.train_inputs[:, model.n_x + j]
        prod *= _backend.ctilde_batch(zj, nus[j], ts[j], ell[model.n_x + j], fam)
    mean = prod @ top.weights
    if not with_variance:
        return mean, None
    W = model.q_matrix
    Z = np.ascontiguousarray(top.train_inputs[:, model.n_x:])
    b = np.array(ell[model.n_x:], dtype=float)
    quad = np.empty(X.shape[0])
    for q in range(X.shape[0]):
        quad[q] = _backend.weighted_pair_sum(
            W, CX[q], Z, np.array([nu[q] for nu in nus]), np.array([t[q] for t in ts]), b, fam
        )
    var = top.kernel.signal_variance + quad - mean**2
    return mean, var


def _clip_variance(var):
    low = var < -NEGATIVE_VARIANCE_TOL
    if np.any(low):
        logger.warning(
            "propagated variance below zero at %d query point(s) (min %.3g); clipped to 0",
            int(low.sum()), float(var.min()),
        )
    return np.maximum(var, 0.0)


def twotier_predict_batch(model: TwoTierModel, x_star, u_star, omega_star, with_variance=True,
                          include_noise=False):
    """Predictive means and variances for T query rows, in response units.

    ``u_star``/``omega_star`` are lists with one entry per manipulated factor
    (arrays of length T); a bare array is accepted when there is one factor.
    With ``with_variance=False`` only the means are computed (O(N) per query)
    and the returned variance is None.
    """
    X, us, omegas = _split_queries(model, x_star, u_star, omega_star)
    nus, ts = _tier1_moments(model, us, omegas)
    mean, var = _propagated_moments(model, X, nus, ts, with_variance)
    top = model.top
    mean = top.target_mean + top.target_scale * mean
    if var is None:
        return mean, None
    var = _clip_variance(var)
    if include_noise:
        var = var + top.noise_variance
    return mean, top.target_scale**2 * var


def twotier_predict(model: TwoTierModel, x_star, u_star, omega_star, include_noise=False) -> GaussianPredictive:
    """Predictive mean and variance of f at one setting of (x, u, omega).

    ``u_star`` and ``omega_star`` carry one entry per manipulated factor.
    """
    if model.n_factors > 1 or isinstance(u_star, (list, tuple)):
        if not isinstance(u_star, (list, tuple)) or not isinstance(omega_star, (list, tuple)):
            raise InputError("pass one (u, omega) pair per manipulated factor as lists")
        if len(u_star) != model.n_factors or len(omega_star) != model.n_factors:
            raise InputError(
                f"model has {model.n_factors} manipulated factor(s), got "
                f"{len(u_star)} u and {len(omega_star)} omega values"
            )
        u_list = [np.atleast_1d(np.asarray(u, float))[None, :] for u in u_star]
        o_list = [[float(o)] for o in omega_star]
    else:
        u_list = [np.atleast_1d(np.asarray(u_star, float))[None, :]]
        o_list = [[float(omega_star)]]
    x = None if model.n_x == 0 else np.atleast_1d(np.asarray(x_star, float))[None, :]
    m, v = twotier_predict_batch(model, x, u_list, o_list, include_noise=include_noise)
    return GaussianPredictive(float(m[0]), float(v[0]))


def _explicit_moments(model: TwoTierModel, x_star, nu, t):
    X = np.empty((1, 0)) if model.n_x == 0 else np.atleast_1d(np.asarray(x_star, float))[None, :]
    shift, scale = model.top.input_shift, model.top.input_scale
    nus, ts = [], []
    for j in range(model.n_factors):
        nj, tj = float(nu[j]), float(t[j])
        if shift is not None:
            col = model.n_x + j
            nj, tj = (nj - shift[col]) / scale[col], tj / scale[col]
        nus.append(np.array([nj]))
        ts.append(np.array([tj]))
    return X, nus, ts


def predict_given_moments(model: TwoTierModel, x_star, nu, t, with_variance=True):
    """Propagated prediction for explicit tier-1 moments ``nu``/``t`` (raw units).

    ``nu`` and ``t`` have one entry per manipulated factor. Returns the
    standardized-scale ``(mean, variance)`` before clipping, which is what the
    invariance checks need.
    """
    X, nus, ts = _explicit_moments(model, x_star, nu, t)
    mean, var = _propagated_moments(model, X, nus, ts, with_variance)
    return float(mean[0]), (None if var is None else float(var[0]))


def expected_conditional_variance(model: TwoTierModel, x_star, nu, t) -> float:
    """E[s^2(x, Z)] under the tier-1 posterior, standardized scale."""
    X, nus, ts = _explicit_moments(model, x_star, nu, t)
    CX = _x_covariance(model, X)
    Z = np.ascontiguousarray(model.top.train_inputs[:, model.n_x:])
    b = np.array(model.top.kernel.length_scales[model.n_x:], dtype=float)
    quad = _backend.weighted_pair_sum(
        model.top.precision(), CX[0], Z, np.array([n[0] for n in nus]),
        np.array([s[0] for s in ts]), b, model.family.code,
    )
    return float(model.top.kernel.signal_variance - quad)
