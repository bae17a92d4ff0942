"""Unpenalized and L1-penalized regression: gaussian, binomial, Cox."""

from .cox import (
    BaselineHazard,
    CoxModel,
    RiskSets,
    breslow_cumhaz,
    check_rank,
    cluster_robust_variance,
    fit_cox,
    nelson_aalen,
    partial_loglik,
    score_residuals,
)
from .lasso import LassoFit, fit_lasso, kkt_violation, lambda_path
from .logistic import LogisticModel, fit_logistic

__all__ = [
    "BaselineHazard", "CoxModel", "RiskSets", "breslow_cumhaz", "check_rank",
    "cluster_robust_variance", "fit_cox", "nelson_aalen", "partial_loglik",
    "score_residuals", "LassoFit", "fit_lasso", "kkt_violation", "lambda_path",
    "LogisticModel", "fit_logistic",
]
