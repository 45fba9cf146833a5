"""Synthetic-data study of the two-tier model.

Data generation per replication:

1. ``u``, ``x``, ``omega`` iid Uniform(0, 10).
2. ``z = g(u) + delta(omega)`` with ``g(u) = 1 + 0.5 u - 0.2 (u - 5)^2`` and
   ``delta`` a zero-mean GP with kernel ``sigma_z^2 exp(-|d omega| / b_omega)``.
3. ``y = f(x, z)`` with ``f`` a zero-mean GP, kernel
   ``sigma_y^2 exp(-|dx| / b_x) exp(-|dz| / b_z)``.
4. A random ``train_fraction`` of rows is used for training; Gaussian noise
   with sd ``sigma_e`` is added to the training copies of ``y`` and ``z``.

Every cell of a grid reuses the same replication seeds, so the cells are
compared on common random numbers.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .dataio import atomic_write_text
from .errors import FitError, InputError, NumericalError, TwoTierError
from .gp_core import gp_fit
from .kernels import KernelFamily, KernelSpec, gram_matrix, jittered_cholesky
from .metrics import mean_sd, normalized_mae
from .tier1 import tier1_fit, tier1_predict_batch
from .tier2 import _assemble, twotier_predict_batch

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.2


def true_g(u):
    u = np.asarray(u, dtype=float)
    return 1.0 + 0.5 * u - 0.2 * (u - 5.0) ** 2


class SimulationError(TwoTierError):
    exit_code = 4


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the study. Ratios are relative to ``sigma_e``."""

    b_omega: float = 1.0
    sigma_z_ratio: float = 10.0
    b_z: float = 1.0
    b_x: float = 1.0
    sigma_y_ratio: float = 10.0
    sigma_e: float = 0.1
    N: int = 1500
    replications: int = 25
    train_fraction: float = 0.5
    Q: int = 5
    seed: int = 0
    restarts: int = 2
    kernel: str = "exp"
    normalize: str = "none"

    def __post_init__(self):
        for name in ("b_omega", "b_z", "b_x"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        for name in ("sigma_z_ratio", "sigma_y_ratio", "sigma_e"):
            if not getattr(self, name) >= 0:
                raise InputError(f"{name} must be nonnegative")
        if self.N < 10:
            raise InputError("N must be at least 10")
        if self.replications < 1:
            raise InputError("replications must be at least 1")
        if not 0 < self.train_fraction < 1:
            raise InputError("train_fraction must lie in (0, 1)")
        if self.normalize not in ("none", "range", "std"):
            raise InputError("normalize must be none, range or std")
        KernelFamily.parse(self.kernel)

    @property
    def sigma_z(self) -> float:
        return self.sigma_z_ratio * self.sigma_e

    @property
    def sigma_y(self) -> float:
        return self.sigma_y_ratio * self.sigma_e

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise InputError(f"unknown scenario field(s): {', '.join(unknown)}")
        return cls(**known)


@dataclass(frozen=True, eq=False)
class SimDataset:
    x: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    z_clean: np.ndarray
    z_noisy: np.ndarray
    y_clean: np.ndarray
    y_noisy: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray


def _gp_draw(rng, spec: KernelSpec, points, size):
    K = gram_matrix(spec, points)
    L, _ = jittered_cholesky(K, scale=spec.signal_variance)
    return L @ rng.standard_normal(size)


def simulate_dataset(cfg: ScenarioConfig, rep_seed) -> SimDataset:
    """Generate one replication's data (deterministic in ``rep_seed``)."""
    rng = np.random.default_rng(rep_seed)
    N = cfg.N
    u = rng.uniform(0.0, 10.0, N)
    x = rng.uniform(0.0, 10.0, N)
    omega = rng.uniform(0.0, 10.0, N)
    eps_z = rng.standard_normal(N)
    eps_y = rng.standard_normal(N)

    z_clean = true_g(u)
    if cfg.sigma_z > 0:
        k = KernelSpec("exp", [cfg.b_omega], 1.0)
        L, _ = jittered_cholesky(gram_matrix(k, omega[:, None]))
        z_clean = z_clean + cfg.sigma_z * (L @ eps_z)

    if cfg.sigma_y > 0:
        c = KernelSpec("exp", [cfg.b_x, cfg.b_z], 1.0)
        L, _ = jittered_cholesky(gram_matrix(c, np.column_stack([x, z_clean])))
        y_clean = cfg.sigma_y * (L @ eps_y)
    else:
        y_clean = np.zeros(N)

    n_train = int(round(cfg.train_fraction * N))
    perm = rng.permutation(N)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    z_noisy = z_clean.copy()
    y_noisy = y_clean.copy()
    z_noisy[train_idx] += cfg.sigma_e * rng.standard_normal(n_train)
    y_noisy[train_idx] += cfg.sigma_e * rng.standard_normal(n_train)
    return SimDataset(x, u, omega, z_clean, z_noisy, y_clean, y_noisy, train_idx, test_idx)


def replication_seeds(master_seed: int, replications: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(replications)]


def run_replication(cfg: ScenarioConfig, rep_seed) -> dict:
    """Fit both tiers on the training half and score the test half."""
    data = simulate_dataset(cfg, rep_seed)
    tr, te = data.train_idx, data.test_idx
    t1 = tier1_fit(
        data.u[tr], data.omega[tr], data.z_noisy[tr],
        Q=cfg.Q, kernel_family=cfg.kernel, restarts=cfg.restarts, seed=rep_seed % (2**31),
    )
    g_true = true_g(data.u[te])
    g_err = t1.g(data.u[te]) - g_true
    # g is identified up to an additive constant shared with the intercept
    mae_g = normalized_mae(g_true, g_true + g_err - np.mean(g_err), cfg.normalize)

    z_hat, _ = tier1_predict_batch(t1, data.u[te], data.omega[te])
    mae_z = normalized_mae(data.z_clean[te], z_hat, cfg.normalize)

    top = gp_fit(
        np.column_stack([data.x[tr], data.z_noisy[tr]]), data.y_noisy[tr],
        kernel_family=cfg.kernel, restarts=cfg.restarts, seed=rep_seed % (2**31),
    )
    model = _assemble(top, [t1], 1)
    y_hat, _ = twotier_predict_batch(
        model, data.x[te][:, None], [data.u[te]], [data.omega[te]], with_variance=False
    )
    mae_y = normalized_mae(data.y_clean[te], y_hat, cfg.normalize)
    return {
        "mae_g": mae_g,
        "mae_z": mae_z,
        "mae_y": mae_y,
        "b_omega": t1.residual_kernel.length_scales[0],
        "sigma_z2": t1.residual_kernel.signal_variance,
        "b_x_hat": top.kernel.length_scales[0],
        "b_z_hat": top.kernel.length_scales[1],
    }


def _safe_replication(cfg, rep, seed):
    try:
        return rep, run_replication(cfg, seed), None
    except (FitError, NumericalError) as exc:
        logger.warning("replication %d failed: %s", rep, exc)
        return rep, None, str(exc)


@dataclass(eq=False)
class ScenarioResult:
    config: ScenarioConfig
    reps: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    seconds: float = 0.0

    def values(self, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.reps], dtype=float)

    def summary(self, metric: str):
        return mean_sd(self.values(metric))


def run_scenario(cfg: ScenarioConfig, n_jobs: int = 1) -> ScenarioResult:
    """Run all replications of one scenario; fails if over 20% of them fail."""
    t0 = time.perf_counter()
    seeds = replication_seeds(cfg.seed, cfg.replications)
    if n_jobs == 1:
        outs = [_safe_replication(cfg, r, s) for r, s in enumerate(seeds)]
    else:
        outs = Parallel(n_jobs=n_jobs)(delayed(_safe_replication)(cfg, r, s) for r, s in enumerate(seeds))
    result = ScenarioResult(cfg)
    for rep, vals, err in sorted(outs, key=lambda o: o[0]):
        if vals is None:
            result.failures.append((rep, err))
        else:
            result.reps.append(dict(rep=rep, **vals))
    result.seconds = time.perf_counter() - t0
    if len(result.failures) > MAX_FAILURE_FRACTION * cfg.replications:
        raise SimulationError(
            f"{len(result.failures)} of {cfg.replications} replications failed for {cfg}"
        )
    return result


# -- scenario grids -------------------------------------------------------------

GRIDS = {
    "batch1": {
        "row_param": "sigma_z_ratio",
        "col_param": "b_omega",
        "rows": (5.0, 10.0, 20.0),
        "cols": (0.3, 1.0, 3.0),
        "fixed": {"b_x": 1.0, "b_z": 1.0, "sigma_y_ratio": 10.0},
        "tables": ("g", "z", "y"),
    },
    "batch2": {
        "row_param": "sigma_y_ratio",
        "col_param": "b_z",
        "rows": (5.0, 10.0, 20.0),
        "cols": (0.3, 1.0, 3.0),
        "fixed": {"b_omega": 1.0, "sigma_z_ratio": 10.0, "b_x": 1.0},
        "tables": ("y",),
    },
}


@dataclass(eq=False)
class GridResult:
    name: str
    row_param: str
    col_param: str
    rows: tuple
    cols: tuple
    tables: tuple
    cells: dict

    def cell_summary(self, metric: str):
        """{(row, col): (mean, sd)} for ``metric`` in g, z, y."""
        return {k: res.summary(f"mae_{metric}") for k, res in self.cells.items()}

    def means(self, metric: str) -> np.ndarray:
        return np.array([[self.cells[(r, c)].summary(f"mae_{metric}")[0] for c in self.cols] for r in self.rows])


def run_grid(name: str, base: ScenarioConfig | None = None, n_jobs: int = 1, progress=None) -> GridResult:
    """Run the 3 x 3 grid ``batch1`` or ``batch2`` on top of ``base`` settings."""
    if name not in GRIDS:
        raise InputError(f"unknown grid {name!r}; choose from {sorted(GRIDS)}")
    spec = GRIDS[name]
    base = base or ScenarioConfig()
    base = replace(base, **spec["fixed"])
    cells = {}
    for r in spec["rows"]:
        for c in spec["cols"]:
            cfg = replace(base, **{spec["row_param"]: r, spec["col_param"]: c})
            res = run_scenario(cfg, n_jobs=n_jobs)
            cells[(r, c)] = res
            if progress is not None:
                progress(name, r, c, res)
    return GridResult(name, spec["row_param"], spec["col_param"], spec["rows"], spec["cols"], spec["tables"], cells)


def format_table(grid: GridResult, metric: str) -> str:
    """Aligned 3 x 3 text table of "mean (sd)" cells."""
    header = [""] + [f"{grid.col_param}={c:g}" for c in grid.cols]
    lines = [header]
    for r in grid.rows:
        row = [f"{grid.row_param}={r:g}"]
        for c in grid.cols:
            m, s = grid.cells[(r, c)].summary(f"mae_{metric}")
            row.append(f"{m:.4f} ({s:.4f})")
        lines.append(row)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in lines)


def write_grid(grid: GridResult, out_dir: str) -> list:
    """Write one CSV and one text table per metric plus per-replication rows."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for metric in grid.tables:
        rows = ["row_param,col_param,mean,sd"]
        for r in grid.rows:
            for c in grid.cols:
                m, s = grid.cells[(r, c)].summary(f"mae_{metric}")
                rows.append(f"{r!r},{c!r},{m!r},{s!r}")
        path = os.path.join(out_dir, f"{grid.name}_mae_{metric}.csv")
        atomic_write_text(path, "\n".join(rows) + "\n")
        written.append(path)
        txt = os.path.join(out_dir, f"{grid.name}_mae_{metric}.txt")
        title = f"MAE of {metric}: rows {grid.row_param}, columns {grid.col_param}"
        atomic_write_text(txt, title + "\n" + format_table(grid, metric) + "\n")
        written.append(txt)

    buf = io.StringIO()
    fields = ["row_param", "col_param", "rep", "mae_g", "mae_z", "mae_y", "b_omega", "sigma_z2", "b_x_hat", "b_z_hat"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for (r, c), res in grid.cells.items():
        for rep in res.reps:
            w.writerow([repr(r), repr(c)] + [repr(rep[f]) if isinstance(rep[f], float) else rep[f] for f in fields[2:]])
    path = os.path.join(out_dir, f"{grid.name}_replications.csv")
    atomic_write_text(path, buf.getvalue())
    written.append(path)
    return written


def config_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)
