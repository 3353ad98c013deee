"""Robust (semi-)supervised classification with parsimonious Gaussian mixtures."""

from .constraints import common_principal_components, constrain_mstep, er_ratio, optimal_truncation
from .covariance import MODEL_NAMES, CovarianceDecomposition, er_required, parameter_count
from .em import (
    DegenerateFitError,
    FitError,
    InfeasibleConfigError,
    MixtureParams,
    ModelFit,
    TrimMask,
    fit,
    predict,
    robust_init,
    robust_init_candidates,
)
from .selection import SelectionReport, bic, penalty, rbic, select

__version__ = "0.1.0"

__all__ = [
    "MODEL_NAMES",
    "CovarianceDecomposition",
    "DegenerateFitError",
    "FitError",
    "InfeasibleConfigError",
    "MixtureParams",
    "ModelFit",
    "SelectionReport",
    "TrimMask",
    "bic",
    "common_principal_components",
    "constrain_mstep",
    "er_ratio",
    "er_required",
    "fit",
    "optimal_truncation",
    "parameter_count",
    "penalty",
    "predict",
    "rbic",
    "robust_init",
    "robust_init_candidates",
    "select",
]
