"""Synthetic stand-in for a nanotube-growth campaign.

The generator mimics the structure of a closed-loop growth study: a laser
power ``u`` steers a reaction temperature ``z`` whose achieved value drifts
from one experiment date ``omega`` to the next, and the growth rate ``y``
depends sharply on temperature plus mildly on six process settings ``x``.

All generator parameters below are invented; they are chosen only so that
the temperature drift is large relative to the measurement noise, which is
the regime where the two-tier structure matters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError
from .kernels import KernelSpec, gram_matrix, jittered_cholesky

X_COLUMNS = (
    "pressure_torr",
    "ethylene_sccm",
    "hydrogen_sccm",
    "water_ppm",
    "catalyst_nm",
    "anneal_s",
)
X_RANGES = (
    (1.0, 100.0),
    (5.0, 50.0),
    (10.0, 200.0),
    (0.0, 300.0),
    (0.5, 5.0),
    (30.0, 600.0),
)
U_COLUMN = "laser_power"
OMEGA_COLUMN = "day"
Z_COLUMN = "temperature"
Y_COLUMN = "growth_rate"


@dataclass(frozen=True)
class AnalogParams:
    """Generator settings (invented, see module docstring)."""

    n_rows: int = 719
    n_dates: int = 36
    campaign_days: float = 540.0
    power_low: float = 10.0
    power_high: float = 50.0
    g_intercept: float = 350.0
    g_linear: float = 14.0
    g_quadratic: float = -0.08
    drift_sd: float = 70.0
    drift_range_days: float = 15.0
    temperature_noise_sd: float = 15.0
    peak_temperature: float = 720.0
    peak_width: float = 70.0
    growth_scale: float = 1.0e4
    growth_floor: float = 500.0
    growth_noise_sd: float = 300.0

    def __post_init__(self):
        if self.n_rows < 10 or self.n_dates < 2:
            raise InputError("need at least 10 rows and 2 dates")
        if self.n_dates > self.campaign_days:
            raise InputError("more dates than campaign days")


def growth_surface(temperature, xs, p: AnalogParams):
    """Noise-free growth rate; ``xs`` holds the six settings scaled to [0, 1]."""
    peak = np.exp(-0.5 * ((temperature - p.peak_temperature) / p.peak_width) ** 2)
    modulation = 1.0 + 0.25 * (xs[:, 0] - 0.5) - 0.3 * (xs[:, 1] - 0.5) ** 2 + 0.15 * np.sin(np.pi * xs[:, 4])
    return p.growth_floor + p.growth_scale * peak * modulation


def make_analog(seed: int = 0, params: AnalogParams | None = None) -> dict:
    """Generate the analog dataset as ``{column: array}`` in CSV column order."""
    p = params or AnalogParams()
    rng = np.random.default_rng(seed)
    days = np.sort(rng.choice(int(p.campaign_days), size=p.n_dates, replace=False)).astype(float)
    date_of_row = np.sort(rng.integers(0, p.n_dates, p.n_rows))
    date_of_row[: p.n_dates] = np.arange(p.n_dates)
    date_of_row.sort()
    omega = days[date_of_row]

    kern = KernelSpec("exp", [p.drift_range_days], p.drift_sd**2)
    L, _ = jittered_cholesky(gram_matrix(kern, days[:, None]), scale=kern.signal_variance)
    drift = (L @ rng.standard_normal(p.n_dates))[date_of_row]

    u = rng.uniform(p.power_low, p.power_high, p.n_rows)
    g = p.g_intercept + p.g_linear * u + p.g_quadratic * u**2
    z_true = g + drift
    z = z_true + p.temperature_noise_sd * rng.standard_normal(p.n_rows)

    xs = rng.uniform(0.0, 1.0, (p.n_rows, len(X_COLUMNS)))
    y = growth_surface(z_true, xs, p) + p.growth_noise_sd * rng.standard_normal(p.n_rows)

    cols = {}
    for j, (name, (lo, hi)) in enumerate(zip(X_COLUMNS, X_RANGES)):
        cols[name] = lo + (hi - lo) * xs[:, j]
    cols[U_COLUMN] = u
    cols[OMEGA_COLUMN] = omega
    cols[Z_COLUMN] = z
    cols[Y_COLUMN] = y
    return cols


def analog_schema() -> dict:
    return {
        "x": list(X_COLUMNS),
        "factors": [{"u": [U_COLUMN], "omega": OMEGA_COLUMN, "z": Z_COLUMN}],
        "y": Y_COLUMN,
    }


def params_dict(params: AnalogParams | None = None) -> dict:
    return asdict(params or AnalogParams())
