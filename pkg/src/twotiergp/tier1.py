"""Bottom-tier manipulation model ``z = alpha + g(u) + delta(omega) + noise``.

``g`` is a polynomial in the manipulating factor ``u`` (rescaled to [-1, 1]),
``delta`` a zero-mean GP over the exogenous variable ``omega`` and the
observation noise a diagonal nugget. For fixed covariance parameters the
trend coefficients are the generalized-least-squares solution, so only the
covariance parameters are optimized (profile likelihood).

The constant basis function and ``alpha`` are the same column; the model
keeps a single intercept, stored in ``alpha``, with ``beta[0] == 0``.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, qr, solve_triangular

from .errors import FitError, InputError
from .gp_core import LOG_2PI, GaussianPredictive, canonical_order, median_spacing, multistart_minimize
from .kernels import KernelFamily, KernelSpec, cross_covariance, jittered_cholesky

logger = logging.getLogger(__name__)

MAX_DEGREE = 10
DEFAULT_DEGREE = 5
DEFAULT_RESTARTS = 8


def _monomial_powers(p: int, Q: int):
    """Exponent tuples of all monomials in p variables with total degree < Q."""
    powers = []
    for deg in range(Q):
        for combo in itertools.combinations_with_replacement(range(p), deg):
            e = [0] * p
            for c in combo:
                e[c] += 1
            powers.append(tuple(e))
    return powers


def basis_matrix(u, Q: int, tensor: bool = False) -> np.ndarray:
    """Polynomial design matrix with column ``q`` equal to ``u**(q-1)``.

    For multivariate ``u`` pass ``tensor=True`` to get every monomial of total
    degree below ``Q`` (the constant first).
    """
    if not isinstance(Q, (int, np.integer)) or Q < 1:
        raise InputError(f"basis degree Q must be a positive integer, got {Q!r}")
    if Q > MAX_DEGREE:
        raise InputError(f"basis degree Q={Q} exceeds the stability cap {MAX_DEGREE}")
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    p = u.shape[1]
    if p == 1:
        return u[:, 0][:, None] ** np.arange(Q)[None, :]
    if not tensor:
        raise InputError(
            f"u has {p} columns; multivariate polynomial bases need tensor=True"
        )
    cols = [np.prod(u ** np.array(e)[None, :], axis=1) for e in _monomial_powers(p, Q)]
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class Tier1Model:
    """Fitted manipulation model for one manipulated factor."""

    degree: int
    alpha: float
    beta: np.ndarray
    residual_kernel: KernelSpec
    nugget: float
    train_u: np.ndarray
    train_omega: np.ndarray
    train_z: np.ndarray
    u_low: np.ndarray
    u_high: np.ndarray
    chol: np.ndarray
    resid_weights: np.ndarray
    log_marginal: float
    tensor: bool = False

    def scale_u(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        p = self.train_u.shape[1]
        if u.ndim == 1:
            u = u.reshape(-1, 1) if p == 1 else u.reshape(1, -1)
        if u.shape[1] != p:
            raise InputError(f"expected {p} u column(s), got {u.shape[1]}")
        return _scale(u, self.u_low, self.u_high)

    def g(self, u) -> np.ndarray:
        """Fitted trend without the intercept."""
        F = basis_matrix(self.scale_u(u), self.degree, self.tensor)
        return F @ self.beta

    def trend(self, u) -> np.ndarray:
        """``alpha + g(u)``, the prior mean of z."""
        return self.alpha + self.g(u)

    def delta_hat(self, omega) -> np.ndarray:
        """Posterior mean of the exogenous deviation at ``omega``."""
        k = cross_covariance(self.residual_kernel, np.reshape(omega, (-1, 1)), self.train_omega[:, None])
        return k @ self.resid_weights

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "tensor": self.tensor,
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "residual_kernel": self.residual_kernel.to_dict(),
            "nugget": self.nugget,
            "u_low": self.u_low.tolist(),
            "u_high": self.u_high.tolist(),
            "train_u": self.train_u.tolist(),
            "train_omega": self.train_omega.tolist(),
            "train_z": self.train_z.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tier1Model":
        return _build_tier1(
            np.asarray(d["train_u"], float),
            np.asarray(d["train_omega"], float),
            np.asarray(d["train_z"], float),
            d["degree"],
            KernelSpec.from_dict(d["residual_kernel"]),
            d["nugget"],
            np.asarray(d["u_low"], float),
            np.asarray(d["u_high"], float),
            tensor=d.get("tensor", False),
            coef=np.concatenate([[d["alpha"]], np.asarray(d["beta"], float)[1:]]),
        )


def _scale(u, low, high):
    span = np.where(high > low, high - low, 1.0)
    return 2.0 * (u - low) / span - 1.0


def _check_rank(F: np.ndarray):
    # pivoted QR tells us which columns are redundant
    _, R, piv = qr(F, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(F.shape) * np.finfo(float).eps * 1e3 if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < F.shape[1]:
        bad = sorted(int(c) for c in piv[rank:])
        raise FitError(
            f"trend design matrix is rank deficient (rank {rank} of {F.shape[1]}); "
            f"collinear basis column(s) {bad} (0 = intercept)"
        )


def _gls(L, F, z):
    """GLS coefficients for covariance L L^T; returns (coef, residual, K^-1 residual)."""
    Fw = solve_triangular(L, F, lower=True, check_finite=False)
    zw = solve_triangular(L, z, lower=True, check_finite=False)
    coef, *_ = np.linalg.lstsq(Fw, zw, rcond=None)
    resid = z - F @ coef
    return coef, resid, cho_solve((L, True), resid, check_finite=False)


class _ProfileNegLogLik:
    """-log p(z) with trend profiled out; theta = log(b_omega, s2_z[, nugget])."""

    def __init__(self, omega, z, F, family: KernelFamily, fit_nugget: bool, fixed_nugget: float):
        self.omega = omega
        self.z = z
        self.F = F
        self.family = family
        self.fit_nugget = fit_nugget
        self.fixed_nugget = fixed_nugget
        diff = omega[:, None] - omega[None, :]
        self.delta = np.abs(diff) if family is KernelFamily.EXPONENTIAL else diff * diff
        self.n = z.size
        self.eye = np.eye(self.n)

    def unpack(self, theta):
        b, s2 = math.exp(theta[0]), math.exp(theta[1])
        nug = math.exp(theta[2]) if self.fit_nugget else self.fixed_nugget
        return b, s2, nug

    def __call__(self, theta):
        b, s2, nug = self.unpack(theta)
        if self.family is KernelFamily.EXPONENTIAL:
            r = self.delta / b
        else:
            r = 0.5 * self.delta / (b * b)
        K = s2 * np.exp(-r)
        A = K + nug * self.eye
        L, _ = jittered_cholesky(A, scale=s2)
        _, resid, a = _gls(L, self.F, self.z)
        nll = 0.5 * resid @ a + np.sum(np.log(np.diag(L))) + 0.5 * self.n * LOG_2PI
        # envelope theorem: the trend is at its optimum, so only dK/dtheta enters
        W = np.outer(a, a) - cho_solve((L, True), self.eye, check_finite=False)
        WK = W * K
        grad = np.empty_like(theta)
        grad[0] = -0.5 * np.sum(WK * r) * (1.0 if self.family is KernelFamily.EXPONENTIAL else 2.0)
        grad[1] = -0.5 * np.sum(WK)
        if self.fit_nugget:
            grad[2] = -0.5 * nug * np.trace(W)
        return float(nll), grad


def _build_tier1(u, omega, z, Q, kernel, nugget, low, high, tensor=False, coef=None):
    F = basis_matrix(_scale(u, low, high), Q, tensor)
    A = cross_covariance(kernel, omega[:, None], omega[:, None])
    A[np.diag_indices_from(A)] += nugget
    L, _ = jittered_cholesky(A, scale=kernel.signal_variance)
    gls_coef, _, _ = _gls(L, F, z)
    if coef is None:
        coef = gls_coef
    resid = z - F @ coef
    w = cho_solve((L, True), resid, check_finite=False)
    lml = -0.5 * resid @ w - np.sum(np.log(np.diag(L))) - 0.5 * z.size * LOG_2PI
    beta = np.concatenate([[0.0], coef[1:]])
    return Tier1Model(
        degree=int(Q),
        alpha=float(coef[0]),
        beta=beta,
        residual_kernel=kernel,
        nugget=float(nugget),
        train_u=u,
        train_omega=omega,
        train_z=z,
        u_low=low,
        u_high=high,
        chol=L,
        resid_weights=w,
        log_marginal=float(lml),
        tensor=tensor,
    )


def tier1_fit(
    u,
    omega,
    z,
    Q: int = DEFAULT_DEGREE,
    kernel_family="exp",
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    fit_nugget: bool = True,
    tensor: bool = False,
    init=None,
) -> Tier1Model:
    """Fit the manipulation model by maximum likelihood.

    Parameters
    ----------
    u : array (N,) or (N, p)
        Manipulating-factor settings.
    omega : array (N,)
        Exogenous variable (e.g. day index); ties are allowed.
    z : array (N,)
        Observed main-factor values.
    Q : int
        Number of polynomial basis functions (degree Q - 1).
    fit_nugget : bool
        Estimate a diagonal observation-noise term. When False a tiny fixed
        nugget (1e-10 of var(z)) only guards the factorization.
    init : sequence, optional
        Starting (b_omega, sigma_z^2[, nugget]) for the first restart.
    """
    family = KernelFamily.parse(kernel_family)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    omega = np.asarray(omega, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    N = z.size
    if u.shape[0] != N or omega.size != N:
        raise InputError(f"u, omega and z must have equal length ({u.shape[0]}, {omega.size}, {N})")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(omega)) and np.all(np.isfinite(z))):
        raise InputError("u, omega and z must be finite")
    if u.shape[1] > 1 and not tensor:
        raise InputError("multivariate u requires tensor=True")
    if N <= Q + 1:
        raise InputError(f"need more than Q + 1 = {Q + 1} observations, got {N}")

    order = canonical_order(omega, u, z)
    u, omega, z = u[order], omega[order], z[order]
    low, high = u.min(axis=0), u.max(axis=0)
    F = basis_matrix(_scale(u, low, high), Q, tensor)
    _check_rank(F)

    coef, *_ = np.linalg.lstsq(F, z, rcond=None)
    var_r = float(np.var(z - F @ coef))
    var_z = float(np.var(z))
    scale = var_z if var_z > 0 else 1.0
    if var_r <= 0:
        var_r = 1e-6 * scale
    floor = 1e-8 * scale
    fixed_nugget = 1e-10 * scale
    med = float(median_spacing(omega[:, None])[0])

    objective = _ProfileNegLogLik(omega, z, F, family, fit_nugget, fixed_nugget)
    bounds = [
        (math.log(med * 1e-3), math.log(med * 1e3)),
        (math.log(floor), math.log(10.0 * scale)),
    ]
    if fit_nugget:
        bounds.append((math.log(floor), math.log(10.0 * scale)))

    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (len(bounds),) or np.any(init <= 0):
            raise InputError(f"init must hold {len(bounds)} positive values")
        starts.append(np.log(init))
    else:
        first = [math.log(med), math.log(0.9 * var_r)]
        if fit_nugget:
            first.append(math.log(0.1 * var_r))
        starts.append(np.array(first))
    while len(starts) < restarts:
        th = [
            math.log(med) + rng.uniform(math.log(1e-2), math.log(1e2)),
            math.log(var_r) + rng.uniform(-math.log(10), math.log(3)),
        ]
        if fit_nugget:
            th.append(math.log(var_r) + rng.uniform(math.log(1e-4), 0.0))
        starts.append(np.array(th))

    best = multistart_minimize(objective, starts[:restarts], bounds, label="tier1_fit")
    b, s2, nug = objective.unpack(best.x)
    kernel = KernelSpec(family, [b], s2)
    model = _build_tier1(u, omega, z, Q, kernel, nug, low, high, tensor)
    logger.info(
        "tier1_fit: b_omega=%.4g sigma_z^2=%.4g nugget=%.4g alpha=%.4g log-ML=%.6g",
        b, s2, nug, model.alpha, model.log_marginal,
    )
    return model


def tier1_predict_batch(model: Tier1Model, u_star, omega_star):
    """Posterior mean ``nu`` and variance ``t^2`` of the noise-free main factor."""
    omega_star = np.atleast_1d(np.asarray(omega_star, dtype=float)).ravel()
    prior = model.trend(u_star)
    if prior.size != omega_star.size:
        raise InputError("u_star and omega_star disagree in length")
    k = cross_covariance(model.residual_kernel, omega_star[:, None], model.train_omega[:, None])
    mean = prior + k @ model.resid_weights
    v = solve_triangular(model.chol, k.T, lower=True, check_finite=False)
    var = model.residual_kernel.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def tier1_predict(model: Tier1Model, u_star, omega_star) -> GaussianPredictive:
    """Posterior of the main factor at one manipulating setting and omega."""
    u_star = np.asarray(u_star, dtype=float).reshape(1, -1)
    m, v = tier1_predict_batch(model, u_star, [float(omega_star)])
    return GaussianPredictive(float(m[0]), float(v[0]))
