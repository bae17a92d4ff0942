"""Maximum-likelihood logistic regression (Newton-Raphson) with separation checks."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import FitError, SeparationError

SEPARATION_COEF = 25.0


@dataclass(frozen=True)
class LogisticModel:
    names: tuple
    intercept: float
    coef: np.ndarray
    loglik: float
    n_iter: int

    def predict(self, design):
        X = np.asarray(design, dtype=float).reshape(-1, len(self.coef))
        return expit(self.intercept + X @ self.coef)


def fit_logistic(design, y, names=None, max_iter=50, tol=1e-10):
    """Logistic regression of binary ``y`` on ``design`` plus an intercept.

    Raises SeparationError when the likelihood has no finite maximum (complete
    or quasi-complete separation), detected by runaway coefficients or fitted
    probabilities collapsing to 0/1.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = np.asarray(design, dtype=float).reshape(n, -1)
    p = X.shape[1]
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    if y.min() == y.max():
        raise SeparationError("outcome has a single level; every covariate separates it")
    mu, sd = X.mean(axis=0), X.std(axis=0)
    const = sd == 0
    if const.any():
        raise FitError(f"constant covariates in logistic model: {[names[j] for j in np.flatnonzero(const)]}")
    Z = np.column_stack([np.ones(n), (X - mu) / np.where(const, 1.0, sd)])
    beta = np.zeros(p + 1)
    beta[0] = np.log(y.mean() / (1 - y.mean()))

    def loglik(b):
        eta = Z @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        prob = expit(Z @ beta)
        W = prob * (1 - prob)
        grad = Z.T @ (y - prob)
        H = Z.T @ (Z * W[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("information matrix singular; check covariates for separation") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * (1 + abs(ll)) or t < 1e-8:
                break
            t /= 2
        beta, ll_old, ll = cand, ll, ll_new
        if np.max(np.abs(beta[1:])) > SEPARATION_COEF:
            raise SeparationError("coefficients diverging; covariates separate the outcome")
        if abs(ll - ll_old) < tol * (1 + abs(ll)) and np.max(np.abs(t * step)) < 1e-7:
            break
    prob = expit(Z @ beta)
    if np.any((prob < 1e-10) | (prob > 1 - 1e-10)):
        raise SeparationError("fitted probabilities of 0 or 1; covariates separate the outcome")
    coef = beta[1:] / np.where(const, 1.0, sd)
    intercept = float(beta[0] - coef @ mu)
    return LogisticModel(names, intercept, coef, ll, it)
