"""Covariance functions for both tiers and covariance-matrix assembly.

Two stationary product kernels are supported::

    exponential        s * exp(-sum_l |a_l - b_l| / ell_l)
    squared-exponential s * exp(-sum_l (a_l - b_l)**2 / (2 ell_l**2))

Both factor into one-dimensional kernels, which is what lets the top tier
be split into an ``x`` part and one part per manipulated factor.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.spatial.distance import cdist

from .errors import InputError, NumericalError

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class KernelFamily(str, enum.Enum):
    EXPONENTIAL = "exp"
    SQUARED_EXPONENTIAL = "sqexp"

    @classmethod
    def parse(cls, value) -> "KernelFamily":
        if isinstance(value, cls):
            return value
        aliases = {
            "exp": cls.EXPONENTIAL,
            "exponential": cls.EXPONENTIAL,
            "matern12": cls.EXPONENTIAL,
            "sqexp": cls.SQUARED_EXPONENTIAL,
            "se": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
            "squaredexponential": cls.SQUARED_EXPONENTIAL,
        }
        key = str(value).lower().replace("_", "").replace("-", "")
        if key not in aliases:
            raise InputError(f"unknown kernel family {value!r}; use 'exp' or 'sqexp'")
        return aliases[key]

    @property
    def code(self) -> int:
        """Integer tag understood by the compiled kernels."""
        return 0 if self is KernelFamily.EXPONENTIAL else 1


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, one length-scale per input dimension, signal variance."""

    family: KernelFamily
    length_scales: tuple
    signal_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily.parse(self.family))
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if len(ls) == 0:
            raise InputError("a kernel needs at least one length-scale")
        if not all(np.isfinite(v) and v > 0 for v in ls):
            raise InputError(f"length-scales must be positive, got {ls}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise InputError(f"signal variance must be positive, got {self.signal_variance}")

    @property
    def ndim(self) -> int:
        return len(self.length_scales)

    @property
    def ell(self) -> np.ndarray:
        return np.asarray(self.length_scales)

    def with_params(self, length_scales=None, signal_variance=None) -> "KernelSpec":
        return KernelSpec(
            self.family,
            self.length_scales if length_scales is None else length_scales,
            self.signal_variance if signal_variance is None else signal_variance,
        )

    def subset(self, dims) -> "KernelSpec":
        """Kernel restricted to ``dims`` with unit signal variance."""
        return KernelSpec(self.family, [self.length_scales[d] for d in dims], 1.0)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "length_scales": list(self.length_scales),
            "signal_variance": self.signal_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], d["length_scales"], d["signal_variance"])


def _as_points(points, ndim: int, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if ndim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != ndim:
        raise InputError(
            f"{name} must have {ndim} column(s) to match the kernel, got shape {np.shape(points)}"
        )
    return arr


def scaled_distance(spec: KernelSpec, A, B) -> np.ndarray:
    """Matrix of the kernel's exponent ``r`` so that ``k = s * exp(-r)``."""
    A = _as_points(A, spec.ndim, "A") / spec.ell
    B = _as_points(B, spec.ndim, "B") / spec.ell
    if spec.family is KernelFamily.EXPONENTIAL:
        return cdist(A, B, "cityblock")
    return 0.5 * cdist(A, B, "sqeuclidean")


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Covariance between two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (spec.ndim,) or b.shape != (spec.ndim,):
        raise InputError(
            f"points must have dimension {spec.ndim}, got {a.shape} and {b.shape}"
        )
    diff = (a - b) / spec.ell
    if spec.family is KernelFamily.EXPONENTIAL:
        r = np.sum(np.abs(diff))
    else:
        r = 0.5 * np.sum(diff * diff)
    return spec.signal_variance * float(np.exp(-r))


def cross_covariance(spec: KernelSpec, A, B) -> np.ndarray:
    """Covariance matrix between point sets ``A`` (n x D) and ``B`` (m x D)."""
    return spec.signal_variance * np.exp(-scaled_distance(spec, A, B))


def gram_matrix(spec: KernelSpec, points, jitter: float = 0.0) -> np.ndarray:
    """Covariance matrix of ``points`` with ``jitter`` added to the diagonal."""
    X = _as_points(points, spec.ndim)
    if X.shape[0] == 0:
        raise InputError("gram_matrix needs at least one point")
    if jitter < 0:
        raise InputError("jitter must be nonnegative")
    K = cross_covariance(spec, X, X)
    # cdist can leave tiny asymmetries for the squared form
    K = 0.5 * (K + K.T)
    if jitter:
        K[np.diag_indices_from(K)] += jitter
    return K


def gradient_blocks(spec: KernelSpec, X, K=None) -> list:
    """Derivatives of the Gram matrix with respect to each log length-scale.

    ``K`` must be the noise-free Gram matrix including the signal variance.
    """
    X = _as_points(X, spec.ndim)
    if K is None:
        K = gram_matrix(spec, X)
    blocks = []
    for d, ell in enumerate(spec.length_scales):
        col = X[:, d]
        delta = np.abs(col[:, None] - col[None, :]) / ell
        if spec.family is KernelFamily.EXPONENTIAL:
            blocks.append(K * delta)
        else:
            blocks.append(K * delta * delta)
    return blocks


def jittered_cholesky(A: np.ndarray, scale: float = 1.0, start: float = JITTER_START):
    """Lower Cholesky factor of ``A``, escalating diagonal jitter if needed.

    Jitter starts at ``start * scale`` and grows tenfold up to
    ``JITTER_MAX * scale``.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``A + jitter * I``.
    jitter : float
        Amount actually added (0.0 when ``A`` factorized as given).
    """
    if not np.all(np.isfinite(A)):
        raise NumericalError("covariance matrix contains non-finite entries")
    try:
        return cholesky(A, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    eye = np.eye(A.shape[0])
    jitter = start * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            L = cholesky(A + jitter * eye, lower=True, check_finite=False)
            logger.debug("Cholesky succeeded with jitter %.3g", jitter)
            return L, jitter
        except LinAlgError:
            jitter *= 10.0
    try:
        cond = np.linalg.cond(A)
    except LinAlgError:
        cond = np.inf
    raise NumericalError(
        f"covariance matrix not positive definite even with jitter {JITTER_MAX * scale:.3g} "
        f"(condition number ~ {cond:.3g})"
    )
