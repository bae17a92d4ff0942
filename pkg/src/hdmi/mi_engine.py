"""Imputation-model predictor selection and predictive mean matching for z2."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigError, ImputationError
from .regfit import fit_lasso, nelson_aalen

logger = logging.getLogger(__name__)

FORCED = ("exposure", "event", "cumhaz")


@dataclass(frozen=True)
class ImputationPlan:
    """Predictors for the z2 imputation model.

    ``predictors`` always starts with the forced exposure and outcome
    representation (event indicator and Nelson-Aalen cumulative hazard at
    follow-up).  ``lasso_z2`` and ``lasso_mz2`` keep the two parent
    selections for diagnostics.
    """

    predictors: tuple = FORCED
    m: int = 10
    k: int = 5
    seed: int = 0
    lasso_z2: tuple = FORCED
    lasso_mz2: tuple = FORCED

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("need at least two imputations")
        if self.k < 1:
            raise ConfigError("donor count k must be >= 1")
        missing = [f for f in FORCED if f not in self.predictors]
        if missing:
            raise ConfigError(f"forced predictors absent from plan: {missing}")
        object.__setattr__(self, "predictors", tuple(self.predictors))


def outcome_representation(cohort):
    """(event, Nelson-Aalen cumulative hazard at each patient's time)."""
    if cohort.event.sum() < 1:
        return cohort.event.copy(), np.zeros(cohort.n)
    na = nelson_aalen(cohort.time, cohort.event)
    return np.asarray(cohort.event, dtype=float), na.at(cohort.time)


def forced_columns(cohort):
    event, cumhaz = outcome_representation(cohort)
    return np.column_stack([cohort.exposure, event, cumhaz])


def predictor_matrix(cohort, names, candidates=None):
    """Dense matrix for forced names, z1 names and ``block:column`` names."""
    forced = None
    z1 = {c: j for j, c in enumerate(cohort.z1_names)}
    cand_pos = {c: j for j, c in enumerate(candidates.names)} if candidates is not None else {}
    cols = []
    for name in names:
        if name in FORCED:
            if forced is None:
                forced = forced_columns(cohort)
            cols.append(forced[:, FORCED.index(name)])
        elif name in z1:
            cols.append(cohort.z1[:, z1[name]])
        elif name in cand_pos:
            v = candidates.values[:, cand_pos[name]]
            cols.append(np.asarray(v.toarray()).ravel() if sp.issparse(v) else np.asarray(v).ravel())
        elif ":" in name and name.split(":", 1)[0] in cohort.blocks:
            b, c = name.split(":", 1)
            blk = cohort.blocks[b]
            try:
                j = blk.columns.index(c)
            except ValueError:
                raise KeyError(f"unknown predictor {name!r}") from None
            v = blk.values[:, j]
            cols.append(np.asarray(v.toarray()).ravel() if sp.issparse(v) else np.asarray(v).ravel())
        else:
            raise KeyError(f"unknown predictor {name!r}")
    return np.column_stack(cols) if cols else np.zeros((cohort.n, 0))


def _lasso_quiet(*args, **kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_lasso(*args, **kwargs)
    for w in caught:
        logger.debug("%s", w.message)
    return fit


def select_imputation_predictors(cohort, candidates, seed=0, m=10, k=5, n_folds=5):
    """Intersect the LASSO selections for z2 (complete cases, gaussian) and
    for its missingness indicator (all patients, binomial).

    Exposure and the outcome representation are forced into both fits.
    """
    if "u" in candidates.names:
        raise ConfigError("u must not be offered as a candidate")
    obs = cohort.complete_rows
    if obs.size == 0:
        raise ImputationError("no complete cases: z2 is missing for every patient")
    F = sp.csc_matrix(forced_columns(cohort))
    X = sp.hstack([F, sp.csc_matrix(candidates.values)], format="csc")
    names = FORCED + tuple(candidates.names)
    pf = np.r_[np.zeros(len(FORCED)), np.ones(candidates.n_cols)]

    ss = np.random.SeedSequence(seed).generate_state(2)
    fit_z2 = _lasso_quiet("gaussian", X[obs], cohort.z2[obs], pf, n_folds=n_folds,
                          seed=int(ss[0]), names=names)
    sel_z2 = fit_z2.selected
    if obs.size == cohort.n:
        logger.info("z2 fully observed; missingness model skipped")
        sel_mz2 = FORCED
    else:
        fit_mz2 = _lasso_quiet("binomial", X, cohort.mz2.astype(float), pf, n_folds=n_folds,
                               seed=int(ss[1]), names=names)
        sel_mz2 = fit_mz2.selected
    in_mz2 = set(sel_mz2)
    inter = FORCED + tuple(c for c in sel_z2 if c in in_mz2 and c not in FORCED)
    if len(inter) == len(FORCED):
        logger.warning("imputation predictor intersection is empty; using forced variables only")
    return ImputationPlan(inter, m=m, k=k, seed=seed, lasso_z2=tuple(sel_z2), lasso_mz2=tuple(sel_mz2))


def _nearest_donors(donor_pred, recip_pred, k):
    """Indices (into donor_pred) of the k closest donors for every recipient."""
    order = np.argsort(donor_pred, kind="stable")
    ds = donor_pred[order]
    n = ds.size
    w = min(2 * k, n)
    pos = np.searchsorted(ds, recip_pred)
    start = np.clip(pos - k, 0, n - w)
    window = start[:, None] + np.arange(w)[None, :]
    dist = np.abs(ds[window] - recip_pred[:, None])
    pick = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return order[np.take_along_axis(window, pick, axis=1)]


def pmm_draw(Xo, yo, Xm, k, rng):
    """One type-1 PMM draw: donors scored with the least-squares fit, recipients
    with a posterior draw of (beta, sigma).  Returns the imputed values."""
    n_obs, p = Xo.shape
    if n_obs < p + 2:
        raise ImputationError(
            f"{n_obs} complete cases for {p} imputation-model parameters; reduce the predictor set"
        )
    if n_obs < k:
        raise ImputationError(f"fewer complete cases ({n_obs}) than donors requested ({k})")
    xtx = Xo.T @ Xo
    singular = np.linalg.matrix_rank(Xo) < p
    if not singular:
        try:
            c = scipy.linalg.cho_factor(xtx)
        except np.linalg.LinAlgError:
            singular = True
    if singular:
        logger.warning("complete-case imputation design is singular; adding 1e-8 diagonal jitter")
        xtx = xtx + 1e-8 * np.eye(p)
        c = scipy.linalg.cho_factor(xtx)
    beta_hat = scipy.linalg.cho_solve(c, Xo.T @ yo)
    resid = yo - Xo @ beta_hat
    df = n_obs - p
    sigma = np.sqrt(resid @ resid / rng.chisquare(df))
    # beta* ~ N(beta_hat, sigma^2 (X'X)^-1) via the Cholesky factor of X'X
    R = scipy.linalg.cholesky(xtx, lower=False)
    beta_star = beta_hat + sigma * scipy.linalg.solve_triangular(R, rng.standard_normal(p))
    donors = _nearest_donors(Xo @ beta_hat, Xm @ beta_star, k)
    chosen = donors[np.arange(Xm.shape[0]), rng.integers(0, donors.shape[1], Xm.shape[0])]
    return yo[chosen]


def pmm_impute(cohort, plan, candidates=None):
    """``plan.m`` completed copies of ``cohort`` with z2 filled by PMM.

    Completed cohorts have ``mz2 == 0`` everywhere and ``imputed`` flagging
    the filled cells.  Each imputation uses its own child of ``plan.seed``.
    """
    miss = cohort.mz2 == 1
    if not miss.any():
        done = cohort.replace(imputed=np.zeros(cohort.n, dtype=bool))
        return [done for _ in range(plan.m)]
    obs = ~miss
    X = np.column_stack([np.ones(cohort.n), predictor_matrix(cohort, plan.predictors, candidates)])
    Xo, Xm = X[obs], X[miss]
    yo = cohort.z2[obs]
    out = []
    for child in np.random.SeedSequence(plan.seed).spawn(plan.m):
        rng = np.random.default_rng(child)
        z2 = np.array(cohort.z2, dtype=float)
        z2[miss] = pmm_draw(Xo, yo, Xm, plan.k, rng)
        out.append(cohort.replace(z2=z2, mz2=np.zeros(cohort.n, dtype=np.int8), imputed=miss.copy()))
    return out
