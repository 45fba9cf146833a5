"""Accuracy and calibration metrics for predictive distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class EvalReport:
    mae: float
    mse: float
    nlpd: float
    n: int


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape:
        raise InputError(f"length mismatch: {truth.size} truths vs {pred.size} predictions")
    if truth.size == 0:
        raise InputError("need at least one test point")
    return truth, pred


def mae(truth, pred_means) -> float:
    truth, pred = _pair(truth, pred_means)
    return float(np.mean(np.abs(truth - pred)))


def mse(truth, pred_means) -> float:
    truth, pred = _pair(truth, pred_means)
    return float(np.mean((truth - pred) ** 2))


def nlpd(truth, pred_means, pred_vars) -> float:
    """Average negative log predictive density under N(mean, var)."""
    truth, pred = _pair(truth, pred_means)
    var = np.asarray(pred_vars, dtype=float).ravel()
    if var.shape != truth.shape:
        raise InputError("pred_vars must match truth in length")
    if np.any(~(var > 0)):
        raise InputError("predictive variances must be strictly positive")
    r2 = (truth - pred) ** 2
    return float(np.mean(r2 / (2.0 * var) + 0.5 * np.log(2.0 * math.pi * var)))


def evaluate(truth, pred_means, pred_vars=None) -> EvalReport:
    truth, pred = _pair(truth, pred_means)
    score = nlpd(truth, pred, pred_vars) if pred_vars is not None else float("nan")
    return EvalReport(mae(truth, pred), mse(truth, pred), score, truth.size)


def normalized_mae(truth, pred_means, normalize: str = "none") -> float:
    """MAE divided by the range or standard deviation of ``truth``."""
    value = mae(truth, pred_means)
    truth = np.asarray(truth, dtype=float)
    if normalize == "none":
        return value
    if normalize == "range":
        denom = float(np.ptp(truth))
    elif normalize == "std":
        denom = float(np.std(truth))
    else:
        raise InputError(f"normalize must be 'none', 'range' or 'std', got {normalize!r}")
    return value / denom if denom > 0 else value


def mean_sd(values):
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), sd
