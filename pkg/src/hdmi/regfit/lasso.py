"""L1-penalized gaussian, binomial and Cox regression with K-fold cross-validation.

Objectives (standardized predictors, coefficients reported on the original
scale):

* gaussian: 1/(2n) * RSS + lam * sum_j pf_j |b_j|
* binomial: -1/n * loglik + lam * sum_j pf_j |b_j|
* cox:      -1/n * Breslow log partial likelihood + lam * sum_j pf_j |b_j|

A penalty factor of 0 forces a column into every model on the path.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import FitError
from . import _cd
from .cox import RiskSets, partial_loglik, score_and_hessian_diag

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian", "binomial", "cox")
N_LAMBDA = 100
LAMBDA_MIN_RATIO = {"gaussian": 1e-3, "binomial": 1e-3, "cox": 5e-2}


@dataclass(frozen=True)
class LassoFit:
    family: str
    names: tuple
    lambdas: np.ndarray
    coef: np.ndarray  # p x len(lambdas), original scale
    intercept: np.ndarray
    penalty_factors: np.ndarray
    lambda_index: int
    folds: Optional[np.ndarray] = None
    cv_error: Optional[np.ndarray] = None
    cv_se: Optional[np.ndarray] = None
    dropped: tuple = ()

    @property
    def lambda_chosen(self):
        return float(self.lambdas[self.lambda_index])

    @property
    def forced(self):
        return tuple(nm for nm, f in zip(self.names, self.penalty_factors) if f == 0)

    def selected_at(self, index):
        nz = self.coef[:, index] != 0
        return tuple(nm for nm, z, f in zip(self.names, nz, self.penalty_factors) if z or f == 0)

    @property
    def selected(self):
        """Columns with a nonzero coefficient at the chosen lambda, plus forced columns."""
        return self.selected_at(self.lambda_index)

    @property
    def coef_chosen(self):
        return self.coef[:, self.lambda_index]

    def linear_predictor(self, design, index=None):
        index = self.lambda_index if index is None else index
        X = _to_csc(design)
        return np.asarray(X @ self.coef[:, index]).ravel() + self.intercept[index]

    def cv_table(self):
        """CV curve as a DataFrame (for diagnostic dumps)."""
        import pandas as pd

        return pd.DataFrame({
            "lambda": self.lambdas,
            "cv_error": self.cv_error if self.cv_error is not None else np.nan,
            "cv_se": self.cv_se if self.cv_se is not None else np.nan,
            "n_nonzero": (self.coef != 0).sum(axis=0),
        })


def _to_csc(design):
    if sp.issparse(design):
        X = sp.csc_matrix(design, dtype=float)
    else:
        X = sp.csc_matrix(np.asarray(design, dtype=float))
    X.sort_indices()
    return X


class _Design:
    """CSC design plus the standardization computed on its rows."""

    def __init__(self, X):
        self.X = X
        self.n, self.p = X.shape
        self.indptr = X.indptr.astype(np.int64)
        self.indices = X.indices.astype(np.int64)
        self.data = X.data.astype(float)
        ones = np.ones(self.n)
        s1, s2 = _cd.column_moments(self.indptr, self.indices, self.data, ones)
        mean = s1 / self.n
        var = np.maximum(s2 / self.n - mean ** 2, 0.0)
        sd = np.sqrt(var)
        self.constant = sd <= 1e-10 * np.maximum(1.0, np.abs(mean))
        self.center = mean
        self.scale = np.where(self.constant, 1.0, sd)

    def eta(self, beta, b0):
        return _cd.linear_predictor(self.indptr, self.indices, self.data, self.center,
                                    self.scale, beta, b0, self.n)

    def gradient(self, w, r, cols):
        return _cd.weighted_gradient(self.indptr, self.indices, self.data, self.center,
                                     self.scale, w, r, cols)

    def to_original(self, beta, b0):
        coef = beta / self.scale
        return coef, b0 - float(np.dot(coef, self.center))

    def to_standardized(self, coef, intercept):
        return coef * self.scale, intercept + float(np.dot(coef, self.center))


class _Gaussian:
    intercept = True
    irls = False

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        self.n = self.y.shape[0]
        self.w = np.full(self.n, 1.0 / self.n)

    def init_intercept(self):
        return float(self.y.mean())

    def working(self, eta):
        return self.w, self.y - eta


class _Binomial:
    intercept = True
    irls = True

    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        self.n = self.y.shape[0]

    def init_intercept(self):
        m = self.y.mean()
        return float(np.log(m / (1 - m)))

    def working(self, eta):
        p = expit(eta)
        v = np.maximum(p * (1 - p), 1e-10)
        return v / self.n, (self.y - p) / v


class _Cox:
    intercept = False
    irls = True

    def __init__(self, time, event):
        self.rs = RiskSets(time, event)
        self.n = self.rs.n

    def init_intercept(self):
        return 0.0

    def working(self, eta):
        score, hess = score_and_hessian_diag(eta, self.rs)
        pos = hess > 1e-300
        r = np.zeros(self.n)
        r[pos] = score[pos] / hess[pos]
        return hess / self.n, r


def _family(family, response, rows=None):
    if family == "gaussian":
        y = np.asarray(response, dtype=float)
        return _Gaussian(y if rows is None else y[rows])
    if family == "binomial":
        y = np.asarray(response, dtype=float)
        return _Binomial(y if rows is None else y[rows])
    time, event = _cox_response(response)
    if rows is not None:
        time, event = time[rows], event[rows]
    return _Cox(time, event)


def _cox_response(response):
    if isinstance(response, tuple) and len(response) == 2:
        time, event = response
    else:
        arr = np.asarray(response, dtype=float)
        time, event = arr[:, 0], arr[:, 1]
    return np.asarray(time, dtype=float), np.asarray(event, dtype=float)


class _PathSolver:
    def __init__(self, design, fam, pf, tol, outer_tol=1e-9, max_sweeps=100_000, max_outer=200):
        self.D = design
        self.outer_tol = outer_tol
        self.fam = fam
        self.pf = pf
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.max_outer = max_outer
        self.usable = ~design.constant
        self.usable_idx = np.flatnonzero(self.usable).astype(np.int64)
        self.beta = np.zeros(design.p)
        self.b0 = fam.init_intercept()

    def _solve(self, lam, eligible):
        D, fam = self.D, self.fam
        lam_pf = lam * self.pf
        for _ in range(self.max_outer):
            eta = D.eta(self.beta, self.b0)
            w, r = fam.working(eta)
            old = self.beta.copy()
            old_b0 = self.b0
            self.b0, _ = _cd.wls_lasso(
                D.indptr, D.indices, D.data, D.center, D.scale, w, r, self.beta, self.b0,
                lam_pf, eligible, fam.intercept, self.tol, self.max_sweeps,
            )
            if not fam.irls:
                return
            if not np.all(np.isfinite(self.beta)):
                raise FitError("coordinate descent diverged")
            delta = max(np.max(np.abs(self.beta - old), initial=0.0), abs(self.b0 - old_b0))
            if delta < self.outer_tol:
                return
        logger.debug("IRLS reached %d outer iterations at lambda=%g", self.max_outer, lam)

    def gradient(self):
        eta = self.D.eta(self.beta, self.b0)
        w, r = self.fam.working(eta)
        return self.D.gradient(w, r, self.usable_idx)

    def fit_forced(self):
        """Unpenalized fit on forced columns only; returns the gradient there."""
        eligible = self.usable & (self.pf == 0)
        self._solve(0.0, eligible)
        return self.gradient()

    def solve_at(self, lam, eligible):
        """Solve at ``lam`` starting from the strong set, adding KKT violators."""
        eligible = eligible & self.usable
        while True:
            self._solve(lam, eligible)
            g = self.gradient()
            viol = self.usable & ~eligible & (np.abs(g) > lam * self.pf + 1e-12)
            if not viol.any():
                return g
            eligible = eligible | viol

    def run(self, lambdas, g_start=None):
        B = np.zeros((self.D.p, len(lambdas)))
        b0 = np.zeros(len(lambdas))
        g_prev, lam_prev = g_start, None
        for k, lam in enumerate(lambdas):
            if g_prev is None or lam_prev is None:
                if g_prev is None:
                    eligible = self.usable.copy()
                else:
                    eligible = (np.abs(g_prev) >= lam * self.pf) | (self.pf == 0)
            else:
                eligible = (np.abs(g_prev) >= (2 * lam - lam_prev) * self.pf) | (self.beta != 0) | (self.pf == 0)
            g_prev = self.solve_at(lam, eligible)
            lam_prev = lam
            B[:, k] = self.beta
            b0[k] = self.b0
        return B, b0


def lambda_path(lam_max, family, n_lambda=N_LAMBDA, ratio=None):
    ratio = LAMBDA_MIN_RATIO[family] if ratio is None else ratio
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def _validate(family, X, response, pf):
    n = X.shape[0]
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if pf.shape != (X.shape[1],):
        raise ValueError("penalty_factors length must equal the number of design columns")
    if np.any(pf < 0) or not np.all(np.isfinite(pf)):
        raise ValueError("penalty factors must be finite and nonnegative")
    if family == "gaussian":
        y = np.asarray(response, dtype=float)
        if y.shape != (n,):
            raise ValueError("response length must equal design rows")
        if np.ptp(y) == 0:
            raise FitError("gaussian response is constant")
    elif family == "binomial":
        y = np.asarray(response, dtype=float)
        if y.shape != (n,) or not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("binomial response must be a 0/1 vector of length n")
        if y.min() == y.max():
            raise FitError("binomial response is constant")
    else:
        time, event = _cox_response(response)
        if time.shape != (n,) or event.shape != (n,):
            raise ValueError("cox response must give time and event of length n")
        if event.sum() < 1:
            raise FitError("cox lasso needs at least one event")


def _heldout_error(family, fit_fam, test_fam, Dtr, Xtest, B, b0, full_fam=None, Xfull=None):
    """Per-lambda error contribution of one held-out fold (summed, not averaged)."""
    L = B.shape[1]
    out = np.zeros(L)
    for k in range(L):
        coef, icpt = Dtr.to_original(B[:, k], b0[k])
        if family == "cox":
            eta_full = np.asarray(Xfull @ coef).ravel()
            eta_tr = np.asarray(Dtr.X @ coef).ravel()
            out[k] = -2.0 * (partial_loglik(eta_full, full_fam.rs) - partial_loglik(eta_tr, fit_fam.rs))
            continue
        eta = np.asarray(Xtest @ coef).ravel() + icpt
        y = test_fam.y
        if family == "gaussian":
            out[k] = np.sum((y - eta) ** 2)
        else:
            p = np.clip(expit(eta), 1e-15, 1 - 1e-15)
            out[k] = -2.0 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    return out


def fit_lasso(family, design, response, penalty_factors=None, n_folds=5, seed=0,
              names=None, lambdas=None, n_lambda=N_LAMBDA, lambda_min_ratio=None, tol=1e-20,
              cv_tol=1e-10, cv_outer_tol=1e-5):
    """Fit a LASSO path and choose lambda by K-fold cross-validation.

    ``response`` is a vector for gaussian/binomial and ``(time, event)`` for cox.
    Without CV (``n_folds`` 0 or None) the last lambda of the path is chosen.
    Fold paths only feed the CV curve and are solved to the looser
    ``cv_tol``/``cv_outer_tol``; the returned full-data path uses ``tol``.
    The CV criterion is mean squared error (gaussian), binomial deviance, or the
    grouped partial-likelihood deviance of Verweij and van Houwelingen (cox).
    """
    X = _to_csc(design)
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    pf = np.ones(p) if penalty_factors is None else np.asarray(penalty_factors, dtype=float)
    _validate(family, X, response, pf)
    if n_folds and n < n_folds:
        raise ValueError(f"need at least n_folds={n_folds} rows, got {n}")

    D = _Design(X)
    dropped = tuple(names[j] for j in np.flatnonzero(D.constant))
    if dropped:
        warnings.warn(f"constant columns dropped from the lasso path: {list(dropped)[:10]}", stacklevel=2)
    fam = _family(family, response)
    solver = _PathSolver(D, fam, pf, tol)
    g0 = solver.fit_forced()
    if lambdas is None:
        pen = solver.usable & (pf > 0)
        lam_max = float(np.max(np.abs(g0[pen]) / pf[pen])) if pen.any() else 0.0
        lambdas = lambda_path(lam_max, family, n_lambda, lambda_min_ratio)
        B, b0 = solver.run(lambdas, g_start=g0)
    else:
        lambdas = np.asarray(lambdas, dtype=float)
        if np.any(np.diff(lambdas) > 0) or np.any(lambdas < 0):
            raise ValueError("lambdas must be nonnegative and nonincreasing")
        B, b0 = solver.run(lambdas, g_start=g0)
    coef = B / D.scale[:, None]
    intercept = b0 - D.center @ coef

    folds = cv_error = cv_se = None
    index = len(lambdas) - 1
    if n_folds:
        rng = np.random.default_rng(seed)
        folds = rng.permutation(n) % n_folds
        per_fold = np.zeros((n_folds, len(lambdas)))
        fold_sizes = np.zeros(n_folds)
        for k in range(n_folds):
            train = np.flatnonzero(folds != k)
            test = np.flatnonzero(folds == k)
            Dtr = _Design(X[train])
            ftr = _family(family, response, train)
            sol = _PathSolver(Dtr, ftr, pf, cv_tol, outer_tol=cv_outer_tol)
            Btr, b0tr = sol.run(lambdas)
            if family == "cox":
                per_fold[k] = _heldout_error(family, ftr, None, Dtr, None, Btr, b0tr, fam, X)
                fold_sizes[k] = len(test)
            else:
                fte = _family(family, response, test)
                per_fold[k] = _heldout_error(family, ftr, fte, Dtr, X[test], Btr, b0tr)
                fold_sizes[k] = len(test)
        cv_error = per_fold.sum(axis=0) / n
        fold_means = per_fold / fold_sizes[:, None]
        cv_se = np.sqrt(
            np.sum(fold_sizes[:, None] * (fold_means - cv_error) ** 2, axis=0)
            / (n * max(n_folds - 1, 1))
        )
        index = int(np.argmin(cv_error))

    return LassoFit(
        family=family, names=names, lambdas=np.asarray(lambdas), coef=coef,
        intercept=intercept, penalty_factors=pf, lambda_index=index, folds=folds,
        cv_error=cv_error, cv_se=cv_se, dropped=dropped,
    )


def kkt_violation(fit, design, response, index=None):
    """Largest KKT residual of ``fit`` at path position ``index`` (standardized scale).

    Zero coefficients contribute max(0, |g_j| - lam*pf_j); nonzero ones
    |g_j - lam*pf_j*sign(b_j)|, where g is the gradient of the scaled log-likelihood.
    """
    index = fit.lambda_index if index is None else index
    X = _to_csc(design)
    D = _Design(X)
    fam = _family(fit.family, response)
    coef = fit.coef[:, index]
    eta = np.asarray(X @ coef).ravel() + fit.intercept[index]
    w, r = fam.working(eta)
    usable = np.flatnonzero(~D.constant).astype(np.int64)
    g = D.gradient(w, r, usable)
    lam = fit.lambdas[index]
    bound = lam * fit.penalty_factors
    zero = coef == 0
    res = np.where(zero, np.maximum(np.abs(g) - bound, 0.0), np.abs(g - bound * np.sign(coef)))
    res[D.constant] = 0.0
    return float(res.max()) if res.size else 0.0
