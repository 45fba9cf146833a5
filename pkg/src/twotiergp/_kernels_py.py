"""Vectorized numpy implementation of the propagation kernels.

Used when the compiled ``_ckernels`` extension is unavailable; the two
modules expose the same four functions with the same signatures.

Notation: ``z`` are training values of one manipulated factor, the query
value is ``Z ~ N(nu, t**2)`` and ``b`` is the length-scale of the top-tier
kernel along that factor. ``family`` is 0 (exponential) or 1
(squared-exponential).
"""
import numpy as np
from scipy.special import erfcx, ndtr

_SQRT1_2 = 0.7071067811865476


def _tail(a, expo, d, t):
    """exp(expo) * Phi(a) where expo = a**2/2 - d**2/(2 t**2)."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        neg = np.exp(-0.5 * (d / t) ** 2) * 0.5 * erfcx(-a * _SQRT1_2)
        pos = np.exp(np.minimum(expo, 0.0)) * ndtr(a)
    return np.where(a < 0, neg, pos)


def _single_exp(d, t, b):
    """E exp(-|d + nu - Z|/b) written with d = z_i - nu."""
    d, t = np.broadcast_arrays(np.asarray(d, float), np.asarray(t, float))
    out = np.exp(-np.abs(d) / b)
    pos = t > 0
    if np.any(pos):
        dp, tp = d[pos], t[pos]
        r = tp / b
        base = 0.5 * r * r
        lo = _tail(dp / tp - r, base - dp / b, dp, tp)
        hi = _tail(-dp / tp - r, base + dp / b, dp, tp)
        out = out.copy()
        out[pos] = lo + hi
    return out


def _single_sq(d, t, b):
    s2 = b * b + t * t
    return np.sqrt(b * b / s2) * np.exp(-0.5 * d * d / s2)


def _phi_diff(hi, lo):
    """Phi(hi) - Phi(lo) for hi >= lo, accurate in both tails."""
    with np.errstate(invalid="ignore"):
        right = ndtr(-lo) - ndtr(-hi)
        left = ndtr(hi) - ndtr(lo)
    return np.where(lo > 0, right, left)


def _pair_exp(zi, zj, nu, t, b):
    zi, zj = np.broadcast_arrays(np.asarray(zi, float), np.asarray(zj, float))
    dm = np.minimum(zi, zj) - nu
    dM = np.maximum(zi, zj) - nu
    gap = dM - dm
    if t <= 0:
        return np.exp(-(np.abs(dm) + np.abs(dM)) / b)
    r = 2.0 * t / b
    base = 0.5 * r * r
    lo = _tail(dm / t - r, base - 2.0 * dm / b, dm, t)
    hi = _tail(-dM / t - r, base + 2.0 * dM / b, dM, t)
    mid = _phi_diff(dM / t, dm / t)
    return np.exp(-gap / b) * (lo + mid + hi)


def _pair_sq(zi, zj, nu, t, b):
    s2 = b * b + 2.0 * t * t
    c = 0.5 * (zi + zj)
    dz = zi - zj
    return np.sqrt(b * b / s2) * np.exp(-(nu - c) ** 2 / s2 - dz * dz / (4.0 * b * b))


def ctilde_vector(z, nu, t, b, family):
    """E[c(z_i, Z)] for each training value ``z_i``."""
    z = np.asarray(z, dtype=float)
    if family == 0:
        return _single_exp(z - nu, t, b)
    return _single_sq(z - nu, t, b)


def ctilde_batch(z, nu, t, b, family):
    """Matrix of E[c(z_i, Z_q)] for queries q (rows) and training i (columns)."""
    z = np.asarray(z, dtype=float)[None, :]
    nu = np.asarray(nu, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[:, None]
    if family == 0:
        return _single_exp(z - nu, t, b)
    return _single_sq(z - nu, t, b)


def ctilde_matrix(z, nu, t, b, family):
    """Matrix of E[c(z_i, Z) c(z_j, Z)] over training pairs."""
    z = np.asarray(z, dtype=float)
    if family == 0:
        return _pair_exp(z[:, None], z[None, :], nu, t, b)
    return _pair_sq(z[:, None], z[None, :], nu, t, b)


def weighted_pair_sum(W, cx, Z, nu, t, b, family):
    """sum_ij W_ij cx_i cx_j prod_k E[c_k(Z_ik, .) c_k(Z_jk, .)].

    ``Z`` is (N, m) with one column per manipulated factor; ``nu``, ``t``,
    ``b`` have length m.
    """
    Z = np.asarray(Z, dtype=float)
    M = np.asarray(W, dtype=float) * np.outer(cx, cx)
    for k in range(Z.shape[1]):
        M = M * ctilde_matrix(Z[:, k], nu[k], t[k], b[k], family)
    return float(np.sum(M))
