# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation kernels; same interface as ``_kernels_py``."""
import numpy as np

from libc.math cimport exp, fabs, sqrt, fmin, fmax
from scipy.special.cython_special cimport erfcx, ndtr

cdef double SQRT1_2 = 0.7071067811865476


cdef inline double _tail(double a, double expo, double d, double t) noexcept nogil:
    cdef double q
    if a < 0:
        q = d / t
        return exp(-0.5 * q * q) * 0.5 * erfcx(-a * SQRT1_2)
    return exp(expo) * ndtr(a)


cdef inline double _single_exp(double d, double t, double b) noexcept nogil:
    cdef double r, base
    if t <= 0:
        return exp(-fabs(d) / b)
    r = t / b
    base = 0.5 * r * r
    return _tail(d / t - r, base - d / b, d, t) + _tail(-d / t - r, base + d / b, d, t)


cdef inline double _single_sq(double d, double t, double b) noexcept nogil:
    cdef double s2 = b * b + t * t
    return sqrt(b * b / s2) * exp(-0.5 * d * d / s2)


cdef inline double _phi_diff(double hi, double lo) noexcept nogil:
    if lo > 0:
        return ndtr(-lo) - ndtr(-hi)
    return ndtr(hi) - ndtr(lo)


cdef inline double _pair_exp(double zi, double zj, double nu, double t, double b) noexcept nogil:
    cdef double dm = fmin(zi, zj) - nu
    cdef double dM = fmax(zi, zj) - nu
    cdef double r, base, lo, hi, mid
    if t <= 0:
        return exp(-(fabs(dm) + fabs(dM)) / b)
    r = 2.0 * t / b
    base = 0.5 * r * r
    lo = _tail(dm / t - r, base - 2.0 * dm / b, dm, t)
    hi = _tail(-dM / t - r, base + 2.0 * dM / b, dM, t)
    mid = _phi_diff(dM / t, dm / t)
    return exp(-(dM - dm) / b) * (lo + mid + hi)


cdef inline double _pair_sq(double zi, double zj, double nu, double t, double b) noexcept nogil:
    cdef double s2 = b * b + 2.0 * t * t
    cdef double c = 0.5 * (zi + zj)
    cdef double dz = zi - zj
    return sqrt(b * b / s2) * exp(-(nu - c) * (nu - c) / s2 - dz * dz / (4.0 * b * b))


cdef inline double _single(double d, double t, double b, int family) noexcept nogil:
    if family == 0:
        return _single_exp(d, t, b)
    return _single_sq(d, t, b)


cdef inline double _pair(double zi, double zj, double nu, double t, double b, int family) noexcept nogil:
    if family == 0:
        return _pair_exp(zi, zj, nu, t, b)
    return _pair_sq(zi, zj, nu, t, b)


def ctilde_vector(z, double nu, double t, double b, int family):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], i
    out = np.empty(n)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _single(zv[i] - nu, t, b, family)
    return out


def ctilde_batch(z, nu, t, double b, int family):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] nv = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], m = nv.shape[0], i, q
    out = np.empty((m, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for q in range(m):
            for i in range(n):
                ov[q, i] = _single(zv[i] - nv[q], tv[q], b, family)
    return out


def ctilde_matrix(z, double nu, double t, double b, int family):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], i, j
    out = np.empty((n, n))
    cdef double[:, ::1] ov = out
    cdef double v
    with nogil:
        for i in range(n):
            ov[i, i] = _pair(zv[i], zv[i], nu, t, b, family)
            for j in range(i + 1, n):
                v = _pair(zv[i], zv[j], nu, t, b, family)
                ov[i, j] = v
                ov[j, i] = v
    return out


def weighted_pair_sum(W, cx, Z, nu, t, b, int family):
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(cx, dtype=np.float64)
    cdef double[:, ::1] Zv = np.ascontiguousarray(np.reshape(Z, (len(cx), -1)), dtype=np.float64)
    cdef double[::1] nv = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = cv.shape[0], m = Zv.shape[1], i, j, k
    cdef double total = 0.0, diag = 0.0, row, w, p
    with nogil:
        for i in range(n):
            if cv[i] == 0.0:
                continue
            p = Wv[i, i] * cv[i] * cv[i]
            for k in range(m):
                p = p * _pair(Zv[i, k], Zv[i, k], nv[k], tv[k], bv[k], family)
            diag = diag + p
            row = 0.0
            for j in range(i + 1, n):
                if cv[j] == 0.0:
                    continue
                w = 0.5 * (Wv[i, j] + Wv[j, i]) * cv[j]
                for k in range(m):
                    w = w * _pair(Zv[i, k], Zv[j, k], nv[k], tv[k], bv[k], family)
                row = row + w
            total = total + row * cv[i]
    return diag + 2.0 * total
