"""Small hand-built models for tests (fixed hyperparameters, no fitting)."""
import numpy as np

from twotiergp.gp_core import build_gp_model
from twotiergp.kernels import KernelSpec
from twotiergp.tier1 import _build_tier1
from twotiergp.tier2 import _assemble


def make_tier1(u, omega, z, Q=2, b=1.0, s2=1.0, nugget=1e-4, family="exp"):
    """Tier-1 model with given hyperparameters (no optimization)."""
    u = np.asarray(u, float).reshape(len(z), -1)
    return _build_tier1(
        u, np.asarray(omega, float), np.asarray(z, float), Q,
        KernelSpec(family, [b], s2), nugget, u.min(axis=0), u.max(axis=0),
    )


def make_twotier(x, z, y, tier1s, ell, noise=1e-2, family="exp", signal=1.0):
    """Two-tier model whose top GP has fixed hyperparameters (standardized y)."""
    z = np.asarray(z, float).reshape(len(y), -1)
    x = np.empty((len(y), 0)) if x is None else np.asarray(x, float).reshape(len(y), -1)
    y = np.asarray(y, float)
    mu, sd = y.mean(), y.std()
    top = build_gp_model(
        KernelSpec(family, ell, signal), noise, np.hstack([x, z]), (y - mu) / sd,
        target_mean=mu, target_scale=sd,
    )
    return _assemble(top, tier1s, x.shape[1])


def random_instance(rng, N=6, m=1, n_x=1, family="exp"):
    """Small random two-tier model with sampled hyperparameters."""
    x = rng.uniform(0, 3, (N, n_x))
    tier1s, zs = [], []
    for _ in range(m):
        u = rng.uniform(0, 1, N)
        omega = rng.uniform(0, 5, N)
        z = 0.5 + u + 0.3 * rng.standard_normal(N)
        tier1s.append(make_tier1(u, omega, z, Q=2, b=rng.uniform(0.5, 3), s2=rng.uniform(0.05, 0.5),
                                 nugget=rng.uniform(0.01, 0.1), family=family))
        zs.append(z)
    Z = np.column_stack(zs)
    y = np.sin(2 * x[:, 0]) + Z.sum(axis=1) + 0.1 * rng.standard_normal(N)
    ell = list(rng.uniform(0.5, 2.0, n_x + m))
    return make_twotier(x, Z, y, tier1s, ell, noise=rng.uniform(0.01, 0.2), family=family)
