"""Random-split comparison of the two-tier model against a single GP.

The single-GP baseline maps the directly set inputs ``(x, u)`` to ``y`` and
ignores the manipulation structure. A second comparison pits the tier-1
model against a plain GP from ``u`` to ``z``.
"""
from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import InputError
from .gp_core import gp_fit, gp_predict_batch
from .metrics import mean_sd, mse, nlpd
from .tier1 import tier1_predict_batch
from .tier2 import twotier_fit, twotier_predict_batch

SPLIT_FIELDS = (
    "split",
    "proposed_mse",
    "proposed_nlpd",
    "standard_mse",
    "standard_nlpd",
    "tier1_z_mse",
    "plain_z_mse",
)


@dataclass(eq=False)
class BenchResult:
    splits: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([s[name] for s in self.splits], dtype=float)

    def wins(self, better: str, worse: str) -> int:
        return int(np.sum(self.column(better) < self.column(worse)))

    def summary(self) -> dict:
        out = {name: mean_sd(self.column(name)) for name in SPLIT_FIELDS[1:]}
        out["mse_wins"] = self.wins("proposed_mse", "standard_mse")
        out["nlpd_wins"] = self.wins("proposed_nlpd", "standard_nlpd")
        out["z_wins"] = self.wins("tier1_z_mse", "plain_z_mse")
        out["n_splits"] = len(self.splits)
        return out

    def splits_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SPLIT_FIELDS)
        for s in self.splits:
            w.writerow([s["split"]] + [repr(float(s[f])) for f in SPLIT_FIELDS[1:]])
        return buf.getvalue()

    def report(self) -> str:
        s = self.summary()
        n = s["n_splits"]

        def cell(name):
            m, sd = s[name]
            return f"{m:.6g} ({sd:.3g})"

        lines = [
            f"splits: {n}",
            f"{'':24}{'proposed':>24}{'standard GP':>24}",
            f"{'MSE':24}{cell('proposed_mse'):>24}{cell('standard_mse'):>24}",
            f"{'NLPD':24}{cell('proposed_nlpd'):>24}{cell('standard_nlpd'):>24}",
            f"proposed MSE lower in {s['mse_wins']}/{n} splits",
            f"proposed NLPD lower in {s['nlpd_wins']}/{n} splits",
            f"{'z MSE':24}{cell('tier1_z_mse'):>24}{cell('plain_z_mse'):>24}  (tier-1 vs plain u->z GP)",
            f"tier-1 z MSE lower in {s['z_wins']}/{n} splits",
        ]
        return "\n".join(lines) + "\n"


def split_indices(n: int, splits: int, train_fraction: float, seed: int):
    if not 0 < train_fraction < 1:
        raise InputError("train fraction must lie in (0, 1)")
    n_train = int(round(train_fraction * n))
    if n_train < 3 or n - n_train < 1:
        raise InputError(f"{n} rows are too few for a {train_fraction:g} split")
    rng = np.random.default_rng(seed)
    for _ in range(splits):
        perm = rng.permutation(n)
        yield np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _hstack(*blocks):
    return np.hstack([b for b in blocks if b is not None and b.size])


def run_split(data: Dataset, train, test, kernel="exp", degree=5, restarts=2, seed=0) -> dict:
    tr, te = data.subset(train), data.subset(test)
    model = twotier_fit(
        tr.x, tr.z, tr.y, u=tr.u, omega=tr.omega,
        kernel_family=kernel, degree=degree, restarts=restarts, seed=seed,
    )
    mean, var = twotier_predict_batch(model, te.x, te.u, te.omega, include_noise=True)

    base = gp_fit(_hstack(tr.x, *tr.u), tr.y, kernel_family=kernel, restarts=restarts, seed=seed)
    bmean, bvar = gp_predict_batch(base, _hstack(te.x, *te.u), include_noise=True)

    t1 = model.tier1s[0]
    z_hat, _ = tier1_predict_batch(t1, te.u[0], te.omega[0])
    plain = gp_fit(tr.u[0], tr.z[:, 0], kernel_family=kernel, restarts=restarts, seed=seed)
    z_plain, _ = gp_predict_batch(plain, te.u[0])
    return {
        "proposed_mse": mse(te.y, mean),
        "proposed_nlpd": nlpd(te.y, mean, var),
        "standard_mse": mse(te.y, bmean),
        "standard_nlpd": nlpd(te.y, bmean, bvar),
        "tier1_z_mse": mse(te.z[:, 0], z_hat),
        "plain_z_mse": mse(te.z[:, 0], z_plain),
    }


def run_benchmark(data: Dataset, splits=25, train_fraction=0.6, seed=0, kernel="exp", degree=5,
                  restarts=2, progress=None) -> BenchResult:
    result = BenchResult()
    for k, (train, test) in enumerate(split_indices(data.n, splits, train_fraction, seed)):
        row = run_split(data, train, test, kernel, degree, restarts, seed + k)
        row["split"] = k
        result.splits.append(row)
        if progress is not None:
            progress(k, row)
    return result
