"""Two-tier Gaussian-process surrogate with analytic uncertainty propagation."""
from ._backend import BACKEND
from .errors import FitError, InputError, NumericalError, TwoTierError
from .gp_core import GaussianPredictive, GpModel, gp_fit, gp_predict, gp_predict_batch
from .kernels import KernelFamily, KernelSpec
from .metrics import EvalReport, evaluate, mae, mse, nlpd
from .tier1 import Tier1Model, tier1_fit, tier1_predict, tier1_predict_batch
from .tier2 import (
    TwoTierModel,
    ctilde2_exp,
    ctilde2_sqexp,
    ctilde_exp,
    ctilde_sqexp,
    twotier_fit,
    twotier_predict,
    twotier_predict_batch,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EvalReport",
    "FitError",
    "GaussianPredictive",
    "GpModel",
    "InputError",
    "KernelFamily",
    "KernelSpec",
    "NumericalError",
    "Tier1Model",
    "TwoTierError",
    "TwoTierModel",
    "ctilde2_exp",
    "ctilde2_sqexp",
    "ctilde_exp",
    "ctilde_sqexp",
    "evaluate",
    "gp_fit",
    "gp_predict",
    "gp_predict_batch",
    "mae",
    "mse",
    "nlpd",
    "tier1_fit",
    "tier1_predict",
    "tier1_predict_batch",
    "twotier_fit",
    "twotier_predict",
    "twotier_predict_batch",
]
