"""Independent numerical integration of the propagation integrals.

Nothing here uses the closed forms: expectations over ``Z ~ N(nu, t^2)`` are
estimated by plain Monte Carlo (common random numbers across points) or by
adaptive Gauss-Kronrod quadrature, and the two-tier predictive moments are
estimated by sampling the tier-1 posterior and averaging the conditional GP
moments. These serve as test oracles and as a fallback predictor for kernels
without closed forms.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.linalg import solve_triangular
from scipy.optimize import minimize_scalar

from .errors import InputError, NumericalError
from .gp_core import GaussianPredictive
from .kernels import cross_covariance
from .tier2 import _split_queries, _tier1_moments

QUAD_HALF_WIDTH = 10.0
DEFAULT_CERT_SAMPLES = 1_000_000
DEFAULT_FALLBACK_SAMPLES = 10_000
_CHUNK = 4096


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    samples: int


@dataclass(frozen=True)
class McPredictive(GaussianPredictive):
    """Monte Carlo predictive moments with their standard errors."""

    mean_se: float = 0.0
    variance_se: float = 0.0
    samples: int = 0


def exp_kernel_1d(b: float):
    return lambda a, z: np.exp(-np.abs(a - z) / b)


def sqexp_kernel_1d(b: float):
    return lambda a, z: np.exp(-0.5 * (a - z) ** 2 / (b * b))


def _normal_draws(nu, t, samples, seed):
    rng = np.random.default_rng(seed)
    return nu + t * rng.standard_normal(samples)


def mc_expect(func, nu: float, t: float, samples: int = DEFAULT_CERT_SAMPLES, seed: int = 0) -> McEstimate:
    """Monte Carlo estimate of E func(Z) for Z ~ N(nu, t^2)."""
    if t < 0:
        raise InputError("t must be nonnegative")
    Z = _normal_draws(nu, t, samples, seed)
    vals = np.asarray(func(Z), dtype=float)
    vals = np.broadcast_to(vals, Z.shape)
    se = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return McEstimate(float(np.mean(vals)), se, samples)


def mc_expect_kernel(kernel_1d, z_points, nu: float, t: float, samples: int = DEFAULT_CERT_SAMPLES,
                     seed: int = 0, z_pair=None):
    """Monte Carlo estimates of E k(z_i, Z) (or E k(z_i, Z) k(z_j, Z)) per point.

    All points share the same draws of Z. ``z_pair`` supplies the partner
    ``z_j`` for each ``z_i`` when the product integrand is wanted.
    """
    if samples < 10_000:
        raise InputError("use at least 10^4 samples for a kernel expectation")
    z_points = np.atleast_1d(np.asarray(z_points, dtype=float))
    Z = _normal_draws(nu, t, samples, seed)
    out = []
    for i, zi in enumerate(z_points):
        vals = kernel_1d(zi, Z)
        if z_pair is not None:
            vals = vals * kernel_1d(float(np.atleast_1d(z_pair)[i]), Z)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), Z.shape)
        out.append(McEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples)), samples))
    return out


def quad_expect_kernel(kernel_1d, z_i: float, nu: float, t: float, z_j=None, tol: float = 1e-10) -> float:
    """Adaptive quadrature of E k(z_i, Z) [k(z_j, Z)] for Z ~ N(nu, t^2).

    The kernel must decrease in ``|z_i - Z|``, which makes the integrand
    log-concave with curvature at least ``1/t^2``. The integration window is
    centred on the integrand's mode (found between ``nu`` and the kernel
    centres) with a half-width of 10 t, so kernels that tilt the Gaussian far
    from ``nu`` are still covered. Kinks at ``z_i``/``z_j`` are passed as
    breakpoints. Raises ``NumericalError`` if the error estimate exceeds
    ``tol``.
    """
    if tol < 1e-12:
        raise InputError("tol must be at least 1e-12")
    if t < 0:
        raise InputError("t must be nonnegative")
    if t == 0:
        v = kernel_1d(z_i, nu)
        return float(v if z_j is None else v * kernel_1d(z_j, nu))
    centres = [p for p in (z_i, z_j) if p is not None]

    def log_integrand(z):
        v = sum(math.log(max(float(kernel_1d(c, z)), 1e-300)) for c in centres)
        return v - 0.5 * ((z - nu) / t) ** 2

    lo_m, hi_m = min(nu, *centres), max(nu, *centres)
    mode = nu
    if hi_m > lo_m:
        mode = minimize_scalar(lambda z: -log_integrand(z), bounds=(lo_m, hi_m), method="bounded",
                               options={"xatol": 1e-3 * t}).x
    # integrate over s = (z - mode) / t so the integral is O(1) for any t; the
    # Gaussian exponent is formed in s to avoid cancellation in z - nu
    offset = (mode - nu) / t

    def log_integrand_s(s):
        z = mode + t * s
        return sum(math.log(max(float(kernel_1d(c, z)), 1e-300)) for c in centres) - 0.5 * (s + offset) ** 2

    peak = log_integrand_s(0.0)

    def scaled(s):
        return math.exp(log_integrand_s(s) - peak)

    half = QUAD_HALF_WIDTH
    kinks = sorted({(p - mode) / t for p in centres if -half < (p - mode) / t < half})
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(scaled, -half, half, points=kinks or None, epsabs=1e-14, epsrel=1e-13, limit=500)
        except IntegrationWarning as exc:
            raise NumericalError(f"quadrature did not reach tol={tol:g}: {exc}") from None
    factor = math.exp(peak) / math.sqrt(2.0 * math.pi)
    if not (err * factor <= tol):
        raise NumericalError(f"quadrature did not reach tol={tol:g} (error estimate {err * factor:.3g})")
    return float(val * factor)


def _conditional_moments(model, X_star, Zs):
    """GP mean and variance of f at (x_star, z) for each row of ``Zs`` (internal scale)."""
    top = model.top
    S = Zs.shape[0]
    xrow = np.broadcast_to(X_star, (S, X_star.shape[-1]))
    Q = np.hstack([xrow, Zs])
    Kq = cross_covariance(top.kernel, Q, top.train_inputs)
    mu = Kq @ top.weights
    v = solve_triangular(top.chol, Kq.T, lower=True, check_finite=False)
    s2 = top.kernel.signal_variance - np.sum(v * v, axis=0)
    return mu, s2


def mc_twotier_predict(model, x_star, u_star, omega_star, samples: int = DEFAULT_FALLBACK_SAMPLES,
                       seed: int = 0, include_noise: bool = False) -> McPredictive:
    """Monte Carlo two-tier prediction at one query.

    Draws ``z_*`` from each tier-1 posterior, evaluates the conditional GP
    mean and variance of f and combines them by the laws of total
    expectation and variance. Standard errors use the delta method.
    """
    if model.n_factors == 1 and not isinstance(u_star, (list, tuple)):
        u_star, omega_star = [u_star], [omega_star]
    u_list = [np.atleast_1d(np.asarray(u, float))[None, :] for u in u_star]
    o_list = [[float(o)] for o in omega_star]
    x = None if model.n_x == 0 else np.atleast_1d(np.asarray(x_star, float))[None, :]
    X, us, omegas = _split_queries(model, x, u_list, o_list)
    nus, ts = _tier1_moments(model, us, omegas)

    top = model.top
    Xi = X
    if top.input_shift is not None and model.n_x:
        Xi = (X - top.input_shift[: model.n_x]) / top.input_scale[: model.n_x]
    nu = np.array([n[0] for n in nus])
    t = np.array([s[0] for s in ts])
    scale2 = top.target_scale**2
    noise = top.noise_variance if include_noise else 0.0

    if np.all(t == 0):
        mu, s2 = _conditional_moments(model, Xi[0], nu[None, :])
        return McPredictive(
            float(top.target_mean + top.target_scale * mu[0]),
            float(scale2 * (max(s2[0], 0.0) + noise)),
            0.0, 0.0, 1,
        )

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((samples, nu.size))
    sum_mu = sum_w = sum_mu2 = sum_w2 = sum_muw = 0.0
    for start in range(0, samples, _CHUNK):
        Zs = nu + t * eps[start:start + _CHUNK]
        mu, s2 = _conditional_moments(model, Xi[0], Zs)
        w = s2 + mu * mu
        sum_mu += mu.sum()
        sum_w += w.sum()
        sum_mu2 += (mu * mu).sum()
        sum_w2 += (w * w).sum()
        sum_muw += (mu * w).sum()
    n = samples
    m_mu = sum_mu / n
    m_w = sum_w / n
    var_mu = (sum_mu2 - n * m_mu**2) / (n - 1)
    var_w = (sum_w2 - n * m_w**2) / (n - 1)
    cov_muw = (sum_muw - n * m_mu * m_w) / (n - 1)
    variance = m_w - m_mu**2
    # delta method for g(E w, E mu) = E w - (E mu)^2
    var_of_var = (var_w - 4.0 * m_mu * cov_muw + 4.0 * m_mu**2 * var_mu) / n
    return McPredictive(
        float(top.target_mean + top.target_scale * m_mu),
        float(scale2 * (max(variance, 0.0) + noise)),
        float(top.target_scale * math.sqrt(max(var_mu, 0.0) / n)),
        float(scale2 * math.sqrt(max(var_of_var, 0.0))),
        n,
    )
