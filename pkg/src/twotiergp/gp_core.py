"""Zero-mean Gaussian-process regression with marginal-likelihood fitting.

This is the engine behind the top tier and the plain-GP baseline. Hyperparameters
live in log space while optimizing; the optimizer is L-BFGS-B with analytic
gradients and several random restarts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import FitError, InputError, NumericalError
from .kernels import (
    KernelFamily,
    KernelSpec,
    cross_covariance,
    gram_matrix,
    jittered_cholesky,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
NOISE_FLOOR_REL = 1e-8
DEFAULT_RESTARTS = 8
MAX_ITER = 500
FTOL = 1e-9


@dataclass(frozen=True)
class GaussianPredictive:
    """Predictive mean and variance of a scalar quantity."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise InputError(f"variance must be nonnegative, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted zero-mean GP.

    ``train_inputs`` and ``train_targets`` are stored on the internal
    (shifted and scaled) axes; ``chol`` factors ``noise * I + C`` and
    ``weights`` solves ``(noise * I + C) w = train_targets``.
    """

    kernel: KernelSpec
    noise_variance: float
    train_inputs: np.ndarray
    train_targets: np.ndarray
    chol: np.ndarray
    weights: np.ndarray
    log_marginal: float
    target_mean: float = 0.0
    target_scale: float = 1.0
    input_shift: np.ndarray = field(default=None)
    input_scale: np.ndarray = field(default=None)

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def ndim(self) -> int:
        return self.train_inputs.shape[1]

    def to_internal(self, X) -> np.ndarray:
        """Map raw inputs onto the axes the kernel sees."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.ndim:
            raise InputError(f"expected {self.ndim} input columns, got {X.shape[1]}")
        if self.input_shift is not None:
            X = (X - self.input_shift) / self.input_scale
        return X

    def precision(self) -> np.ndarray:
        """``(noise * I + C)^{-1}`` on the internal scale."""
        return cho_solve((self.chol, True), np.eye(self.n_train), check_finite=False)

    def to_dict(self) -> dict:
        """Serializable hyperparameters and training snapshot (raw inputs)."""
        X = self.train_inputs
        if self.input_shift is not None:
            X = X * self.input_scale + self.input_shift
        return {
            "kernel": self.kernel.to_dict(),
            "noise_variance": self.noise_variance,
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "input_shift": None if self.input_shift is None else self.input_shift.tolist(),
            "input_scale": None if self.input_scale is None else self.input_scale.tolist(),
            "train_inputs_internal": self.train_inputs.tolist(),
            "train_targets_internal": self.train_targets.tolist(),
            "train_inputs": X.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        shift = None if d["input_shift"] is None else np.asarray(d["input_shift"], float)
        scale = None if d["input_scale"] is None else np.asarray(d["input_scale"], float)
        return build_gp_model(
            KernelSpec.from_dict(d["kernel"]),
            d["noise_variance"],
            np.asarray(d["train_inputs_internal"], float),
            np.asarray(d["train_targets_internal"], float),
            target_mean=d["target_mean"],
            target_scale=d["target_scale"],
            input_shift=shift,
            input_scale=scale,
        )


def build_gp_model(
    kernel: KernelSpec,
    noise_variance: float,
    X: np.ndarray,
    y: np.ndarray,
    target_mean: float = 0.0,
    target_scale: float = 1.0,
    input_shift=None,
    input_scale=None,
) -> GpModel:
    """Factorize and solve for fixed hyperparameters (inputs already internal)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    A = gram_matrix(kernel, X)
    A[np.diag_indices_from(A)] += noise_variance
    L, _ = jittered_cholesky(A, scale=kernel.signal_variance)
    w = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ w - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI
    return GpModel(
        kernel=kernel,
        noise_variance=float(noise_variance),
        train_inputs=X,
        train_targets=y,
        chol=L,
        weights=w,
        log_marginal=float(lml),
        target_mean=float(target_mean),
        target_scale=float(target_scale),
        input_shift=input_shift,
        input_scale=input_scale,
    )


def gp_log_marginal(kernel: KernelSpec, noise_variance: float, inputs, targets) -> float:
    """Exact log density of ``targets`` under ``N(0, noise * I + C)``."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, kernel.ndim)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise InputError("inputs and targets disagree in length")
    if noise_variance < 0:
        raise InputError("noise variance must be nonnegative")
    A = gram_matrix(kernel, X)
    A[np.diag_indices_from(A)] += noise_variance
    try:
        L = cholesky(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError(f"covariance not positive definite: {exc}") from None
    alpha = cho_solve((L, True), y, check_finite=False)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


class _NegLogMarginal:
    """Negative log marginal likelihood and gradient over log-hyperparameters.

    Layout of ``theta``: log length-scales, log noise, then log signal variance
    when it is free.
    """

    def __init__(self, X, y, family: KernelFamily, fit_signal: bool, signal: float = 1.0):
        self.X = X
        self.y = y
        self.family = family
        self.fit_signal = fit_signal
        self.signal = signal
        n, D = X.shape
        self.n, self.D = n, D
        # per-dimension |dx| (exp) or dx^2 (sqexp); reused every evaluation
        self.deltas = []
        for d in range(D):
            diff = X[:, d][:, None] - X[:, d][None, :]
            self.deltas.append(np.abs(diff) if family is KernelFamily.EXPONENTIAL else diff * diff)
        self.eye = np.eye(n)

    def unpack(self, theta):
        ell = np.exp(theta[: self.D])
        noise = math.exp(theta[self.D])
        signal = math.exp(theta[self.D + 1]) if self.fit_signal else self.signal
        return ell, noise, signal

    def __call__(self, theta):
        ell, noise, signal = self.unpack(theta)
        r = np.zeros((self.n, self.n))
        if self.family is KernelFamily.EXPONENTIAL:
            scaled = [dl / e for dl, e in zip(self.deltas, ell)]
        else:
            scaled = [0.5 * dl / (e * e) for dl, e in zip(self.deltas, ell)]
        for s in scaled:
            r += s
        K = signal * np.exp(-r)
        A = K + noise * self.eye
        L, _ = jittered_cholesky(A, scale=signal)
        alpha = cho_solve((L, True), self.y, check_finite=False)
        nll = 0.5 * self.y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * self.n * LOG_2PI
        Ainv = cho_solve((L, True), self.eye, check_finite=False)
        W = np.outer(alpha, alpha) - Ainv
        grad = np.empty_like(theta)
        factor = 1.0 if self.family is KernelFamily.EXPONENTIAL else 2.0
        WK = W * K
        for d, s in enumerate(scaled):
            grad[d] = -0.5 * factor * np.sum(WK * s)
        grad[self.D] = -0.5 * noise * np.trace(W)
        if self.fit_signal:
            grad[self.D + 1] = -0.5 * np.sum(WK)
        return float(nll), grad


def median_spacing(X) -> np.ndarray:
    """Per-dimension median absolute pairwise difference (order independent)."""
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        col = np.sort(X[:, d])
        if col.size > 400:
            col = col[np.linspace(0, col.size - 1, 400).round().astype(int)]
        diff = np.abs(col[:, None] - col[None, :])[np.triu_indices(col.size, 1)]
        med = float(np.median(diff)) if diff.size else 0.0
        out[d] = med if med > 0 else 1.0
    return out


def canonical_order(*cols) -> np.ndarray:
    """Row order that depends only on the row contents (lexicographic)."""
    keys = []
    for c in cols:
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            keys.append(c)
        else:
            keys.extend(c[:, j] for j in range(c.shape[1]))
    # lexsort treats the last key as primary
    return np.lexsort(tuple(reversed(keys)))


def multistart_minimize(objective, starts, bounds, label="gp"):
    """Run L-BFGS-B from each start; return the best ``OptimizeResult``.

    A restart counts as failed when it raises a numerical error or ends on a
    non-finite objective. Raises ``FitError`` if all of them fail.
    """
    best = None
    best_seen = None
    for k, x0 in enumerate(starts):
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": MAX_ITER, "ftol": FTOL, "gtol": 1e-8},
            )
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.debug("%s restart %d failed: %s", label, k, exc)
            continue
        if not np.isfinite(res.fun):
            continue
        if best_seen is None or res.fun < best_seen[0]:
            best_seen = (res.fun, res.x)
        if not res.success:
            logger.debug("%s restart %d: %s", label, k, res.message)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(
            f"{label}: all {len(starts)} restarts failed",
            best_params=None if best_seen is None else best_seen[1],
        )
    return best


def gp_fit(
    inputs,
    targets,
    kernel_family="exp",
    init=None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    standardize: bool = True,
    standardize_inputs: bool = False,
    fit_signal_variance: bool = False,
) -> GpModel:
    """Fit a zero-mean GP by maximizing the log marginal likelihood.

    Parameters
    ----------
    inputs : array (N, D)
    targets : array (N,)
    kernel_family : {"exp", "sqexp"}
    init : sequence, optional
        Starting hyperparameters in natural units: D length-scales, the noise
        variance, and the signal variance if ``fit_signal_variance``. Used for
        the first restart; the others are random.
    restarts : int
        Number of local optimizations (the first one starts from ``init`` or
        from the median-spacing heuristic).
    standardize : bool
        Center and scale targets to unit variance; the signal variance is then
        fixed at one unless ``fit_signal_variance``.
    standardize_inputs : bool
        Center and scale each input column before evaluating the kernel.

    Returns
    -------
    GpModel
    """
    family = KernelFamily.parse(kernel_family)
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise InputError(f"{X.shape[0]} input rows but {y.shape[0]} targets")
    if X.shape[0] < 2:
        raise InputError("gp_fit needs at least two observations")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("inputs and targets must be finite")
    if restarts < 1:
        raise InputError("restarts must be positive")

    if not standardize:
        # without standardization the prior scale has to be learned
        fit_signal_variance = True

    order = canonical_order(X, y)
    X, y = X[order], y[order]

    t_mean, t_scale = 0.0, 1.0
    if standardize:
        t_mean = float(np.mean(y))
        sd = float(np.std(y))
        t_scale = sd if sd > 0 else 1.0
    ys = (y - t_mean) / t_scale

    shift = scale = None
    if standardize_inputs:
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - shift) / scale

    var_y = float(np.var(ys))
    if var_y <= 0:
        var_y = 1.0
    floor = NOISE_FLOOR_REL * var_y
    med = median_spacing(X)
    D = X.shape[1]

    objective = _NegLogMarginal(X, ys, family, fit_signal_variance, signal=1.0)
    bounds = [(math.log(m * 1e-3), math.log(m * 1e3)) for m in med]
    bounds.append((math.log(floor), math.log(10.0 * var_y)))
    if fit_signal_variance:
        bounds.append((math.log(1e-4 * var_y), math.log(1e2 * var_y)))

    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (len(bounds),) or np.any(init <= 0):
            raise InputError(f"init must hold {len(bounds)} positive values")
        starts.append(np.log(init))
    else:
        first = list(np.log(med)) + [math.log(0.1 * var_y)]
        if fit_signal_variance:
            first.append(math.log(var_y))
        starts.append(np.array(first))
    while len(starts) < restarts:
        th = list(np.log(med) + rng.uniform(math.log(1e-2), math.log(1e2), size=D))
        th.append(math.log(var_y) + rng.uniform(math.log(1e-4), 0.0))
        if fit_signal_variance:
            th.append(math.log(var_y) + rng.uniform(-math.log(10), math.log(10)))
        starts.append(np.array(th))

    best = multistart_minimize(objective, starts[:restarts], bounds, label="gp_fit")
    ell, noise, signal = objective.unpack(best.x)
    kernel = KernelSpec(family, ell, signal)
    model = build_gp_model(kernel, noise, X, ys, t_mean, t_scale, shift, scale)
    logger.info(
        "gp_fit: length-scales=%s noise=%.4g signal=%.4g log-ML=%.6g",
        np.array2string(ell, precision=4), noise, signal, model.log_marginal,
    )
    return model


def gp_predict_batch(model: GpModel, queries, include_noise: bool = False):
    """Posterior mean and variance at many query points, in target units."""
    Xq = model.to_internal(queries)
    Kq = cross_covariance(model.kernel, Xq, model.train_inputs)
    mean = Kq @ model.weights
    v = solve_triangular(model.chol, Kq.T, lower=True, check_finite=False)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.noise_variance
    return (
        model.target_mean + model.target_scale * mean,
        model.target_scale**2 * var,
    )


def gp_predict(model: GpModel, query, include_noise: bool = False) -> GaussianPredictive:
    """Posterior of the latent function at a single query point."""
    q = np.asarray(query, dtype=float).reshape(1, -1)
    m, v = gp_predict_batch(model, q, include_noise=include_noise)
    return GaussianPredictive(float(m[0]), float(v[0]))
