"""The comparator analyses: unadjusted, complete case, and the MI pipelines."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..causal import estimate_ps, marginal_effect, match_1to1, rubin_pool, select_ps_covariates
from ..errors import HDMIError
from ..features import MODEL_BLOCKS, assemble_candidates
from ..mi_engine import pmm_impute, select_imputation_predictors
from ..regfit import fit_cox

logger = logging.getLogger(__name__)

Z975 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class AnalysisSettings:
    m: int = 10
    k: int = 5
    n_folds: int = 5
    caliper: float = 0.2
    caliper_mode: str = "logit_sd"
    prevalence_threshold: float = 0.01


@dataclass(frozen=True)
class ModelResult:
    model: str
    log_hr: float = float("nan")
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    degenerate: bool = False
    reason: str = ""
    n_pairs: float = float("nan")
    n_imp_predictors: int = -1
    n_lasso_z2: int = -1
    n_lasso_mz2: int = -1
    n_ps_covariates: int = -1
    per_imputation: tuple = field(default=(), compare=False)

    @classmethod
    def failed(cls, model, reason):
        return cls(model, degenerate=True, reason=reason)


def _seeds(seed, k):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def _unadjusted(cohort):
    model = fit_cox(cohort.exposure[:, None], cohort.time, cohort.event, names=("exposure",))
    b = float(model.coef[0])
    se = float(model.se[0])
    return ModelResult("unadjusted", b, se, b - Z975 * se, b + Z975 * se)


def _matched_effect(cohort, ps_names, candidates, settings, seed, allow_u=False):
    ps = estimate_ps(cohort, ps_names, candidates, allow_u=allow_u)
    matches = match_1to1(ps, cohort.exposure, settings.caliper, seed=seed, mode=settings.caliper_mode)
    return marginal_effect(cohort, matches)


def _single(model_id, cohort, ps_names, candidates, settings, seed, allow_u=False):
    eff = _matched_effect(cohort, ps_names, candidates, settings, seed, allow_u)
    if eff.degenerate:
        return ModelResult.failed(model_id, eff.reason)
    se = float(np.sqrt(eff.variance))
    return ModelResult(model_id, eff.log_hr, se, eff.log_hr - Z975 * se, eff.log_hr + Z975 * se,
                       n_pairs=eff.n_pairs, n_ps_covariates=len(ps_names))


def _complete_case(cohort, settings, seed):
    cc = cohort.take(cohort.complete_rows)
    if cc.n < 4:
        return ModelResult.failed("complete_case", "too few complete cases")
    s_ps, s_match = _seeds(seed, 2)
    cand = assemble_candidates(cc, "complete_case")
    ps_names = select_ps_covariates(cc, cand, seed=s_ps, n_folds=settings.n_folds)
    return _single("complete_case", cc, ps_names, cand, settings, s_match)


def _oracle(cohort, settings, seed):
    full = cohort.replace(mz2=np.zeros(cohort.n, dtype=np.int8))
    names = tuple(cohort.z1_names) + ("z2", "u")
    return _single("oracle", full, names, None, settings, seed, allow_u=True)


def _mi_pipeline(model_id, cohort, settings, seed):
    s_sel, s_pmm, s_ps, s_match = _seeds(seed, 4)
    cand = assemble_candidates(cohort, model_id, filter_threshold=settings.prevalence_threshold)
    plan = select_imputation_predictors(cohort, cand, seed=s_sel, m=settings.m, k=settings.k,
                                        n_folds=settings.n_folds)
    plan = dataclasses.replace(plan, seed=s_pmm)
    completed = pmm_impute(cohort, plan, cand)
    # The outcome LASSO sees exposure, time, event and the candidates, none of
    # which are imputed, so its selection is the same in every completed
    # dataset; fit it once.
    ps_names = select_ps_covariates(completed[0], cand, seed=s_ps, n_folds=settings.n_folds)
    # One treated processing order for all imputations, so the between
    # variance reflects imputation rather than matching-order noise.
    per_imp = []
    for i, comp in enumerate(completed):
        try:
            eff = _matched_effect(comp, ps_names, cand, settings, s_match)
        except HDMIError as exc:
            per_imp.append((i, np.nan, np.nan, 0, True, str(exc)))
            continue
        per_imp.append((i, eff.log_hr, eff.variance, eff.n_pairs, eff.degenerate, eff.reason))
    ok = [r for r in per_imp if not r[4]]
    common = dict(
        n_imp_predictors=len(plan.predictors), n_lasso_z2=len(plan.lasso_z2),
        n_lasso_mz2=len(plan.lasso_mz2), n_ps_covariates=len(ps_names), per_imputation=tuple(per_imp),
    )
    if len(ok) < 2:
        return ModelResult(model_id, degenerate=True,
                           reason=f"only {len(ok)} usable imputations", **common)
    pooled = rubin_pool([r[1] for r in ok], [r[2] for r in ok])
    return ModelResult(model_id, pooled.theta, float(np.sqrt(pooled.total)), pooled.ci_low, pooled.ci_high,
                       n_pairs=float(np.mean([r[3] for r in ok])), **common)


def run_model(replicate, model_id, seed, settings=AnalysisSettings()):
    """Estimate the exposure log-HR with one comparator analysis.

    Failures that make the replicate unusable for this model (no matches,
    no events, separation, ...) come back as a degenerate result.
    """
    if model_id not in MODEL_BLOCKS:
        raise ValueError(f"unknown model id {model_id!r}")
    try:
        if model_id == "unadjusted":
            return _unadjusted(replicate)
        if model_id == "complete_case":
            return _complete_case(replicate, settings, seed)
        if model_id == "oracle":
            return _oracle(replicate, settings, seed)
        return _mi_pipeline(model_id, replicate, settings, seed)
    except HDMIError as exc:
        logger.info("model %s degenerate: %s", model_id, exc)
        return ModelResult.failed(model_id, f"{type(exc).__name__}: {exc}")
