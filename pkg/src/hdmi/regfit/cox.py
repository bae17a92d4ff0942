"""Cox proportional hazards regression with Breslow handling of ties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..errors import DivergenceError, FitError, SingularityError

MAX_ABS_COEF = 50.0


@dataclass(frozen=True)
class BaselineHazard:
    """Step-function cumulative baseline hazard at the distinct event times."""

    times: np.ndarray
    cumhaz: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        cumhaz = np.asarray(self.cumhaz, dtype=float)
        if times.shape != cumhaz.shape or times.ndim != 1:
            raise ValueError("times and cumhaz must be 1-D arrays of equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0):
            raise ValueError("times must be positive and strictly increasing")
        if cumhaz.size and (np.any(np.diff(cumhaz) < 0) or cumhaz[0] < 0):
            raise ValueError("cumhaz must be nonnegative and nondecreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "cumhaz", cumhaz)

    def at(self, t):
        """Cumulative hazard at time(s) ``t`` (right-continuous step function)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.cumhaz[np.maximum(idx, 0)], 0.0)
        return out if out.ndim else float(out)

    def scaled(self, kappa):
        return BaselineHazard(self.times, self.cumhaz * float(kappa))

    @property
    def max_cumhaz(self):
        return float(self.cumhaz[-1]) if self.cumhaz.size else 0.0


@dataclass(frozen=True)
class CoxModel:
    names: tuple
    coef: np.ndarray
    loglik: float
    information: np.ndarray
    n_iter: int
    grad_norm: float
    loglik_null: float = float("nan")

    @property
    def covariance(self):
        return np.linalg.inv(self.information)

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))

    def coefficient(self, name):
        return float(self.coef[self.names.index(name)])

    def with_coef(self, name, value):
        coef = self.coef.copy()
        coef[self.names.index(name)] = value
        return CoxModel(self.names, coef, self.loglik, self.information, self.n_iter,
                        self.grad_norm, self.loglik_null)


class RiskSets:
    """Sorted-time bookkeeping shared by every Breslow computation.

    Risk set at event time t_k is {j : time_j >= t_k}.
    """

    def __init__(self, time, event):
        time = np.asarray(time, dtype=float)
        event = np.asarray(event, dtype=float)
        self.n = time.shape[0]
        self.order = np.argsort(time, kind="stable")
        self.t_sorted = time[self.order]
        self.d_sorted = event[self.order]
        self.event_times = np.unique(self.t_sorted[self.d_sorted == 1])
        self.start = np.searchsorted(self.t_sorted, self.event_times, side="left")
        ev_idx = np.searchsorted(self.event_times, self.t_sorted[self.d_sorted == 1])
        self.d = np.bincount(ev_idx, minlength=self.event_times.size).astype(float)
        # index of the last event time <= each patient's time (original order)
        self.upto = np.searchsorted(self.event_times, time, side="right") - 1
        self.event = event
        self.time = time

    @property
    def n_events(self):
        return float(self.d.sum())

    def s0(self, w):
        """Risk-set sums of ``w`` (original order) at each event time."""
        rc = np.cumsum(w[self.order][::-1])[::-1]
        return rc[self.start]

    def s1(self, w, X):
        rc = np.cumsum((w[:, None] * X)[self.order][::-1], axis=0)[::-1]
        return rc[self.start]

    def cumulative(self, per_time):
        """For each patient, sum of ``per_time`` over event times <= their time."""
        cum = np.cumsum(per_time, axis=0)
        out = np.zeros((self.n,) + cum.shape[1:])
        ok = self.upto >= 0
        out[ok] = cum[self.upto[ok]]
        return out


def partial_loglik(eta, rs):
    """Breslow log partial likelihood for linear predictor ``eta``."""
    c = eta.max() if eta.size else 0.0
    s0 = rs.s0(np.exp(eta - c))
    return float(np.dot(rs.event, eta) - np.dot(rs.d, np.log(s0) + c))


def score_and_hessian_diag(eta, rs):
    """Per-patient gradient of the log partial likelihood w.r.t. eta and the
    diagonal of its negative Hessian (the glmnet working weights)."""
    c = eta.max()
    e = np.exp(eta - c)
    s0 = rs.s0(e)
    h1 = rs.cumulative(rs.d / s0)
    h2 = rs.cumulative(rs.d / s0 ** 2)
    score = rs.event - e * h1
    hess = e * h1 - e * e * h2
    return score, np.maximum(hess, 0.0)


def _loglik_grad_info(beta, X, rs):
    eta = X @ beta
    c = eta.max()
    w = np.exp(eta - c)
    ll = float(np.dot(rs.event, eta) - np.dot(rs.d, np.log(rs.s0(w)) + c))
    ws = w[rs.order]
    Xs = X[rs.order]
    wx = ws[:, None] * Xs
    s0 = np.cumsum(ws[::-1])[::-1][rs.start]
    s1 = np.cumsum(wx[::-1], axis=0)[::-1][rs.start]
    s2 = np.cumsum((wx[:, :, None] * Xs[:, None, :])[::-1], axis=0)[::-1][rs.start]
    xbar = s1 / s0[:, None]
    grad = rs.event @ X - rs.d @ xbar
    info = np.einsum("k,kij->ij", rs.d / s0, s2) - np.einsum("k,ki,kj->ij", rs.d, xbar, xbar)
    return ll, grad, info


def check_rank(X, names):
    """Raise SingularityError naming constant or linearly dependent columns."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return
    sd = X.std(axis=0)
    const = [names[j] for j in np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0)))]
    if const:
        raise SingularityError("design has constant columns", const)
    Xc = (X - X.mean(axis=0)) / sd
    _, R, piv = scipy.linalg.qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps * 1e3
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        raise SingularityError("design is rank deficient", [names[j] for j in piv[rank:]])


def fit_cox(design, time, event, names=None, max_iter=100, init=None):
    """Newton-Raphson maximum of the Breslow partial likelihood.

    Stops when the relative log-likelihood change falls below 1e-9 or the
    gradient max-norm below 1e-8, provided the last Newton step was small;
    halves the step whenever the likelihood decreases.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    if time.shape != (n,) or event.shape != (n,):
        raise ValueError("time/event length must equal design rows")
    if event.sum() < 1:
        raise FitError("Cox model needs at least one event")
    check_rank(X, names)
    rs = RiskSets(time, event)
    Xc = X - X.mean(axis=0)

    beta = np.zeros(p) if init is None else np.asarray(init, dtype=float).copy()
    ll, grad, info = _loglik_grad_info(beta, Xc, rs)
    ll_null = ll if init is None else partial_loglik(np.zeros(n), rs)
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            if np.max(np.abs(beta)) > 10:
                raise DivergenceError("information became singular; likelihood appears monotone") from None
            raise SingularityError("information matrix is singular", names) from None
        if not np.all(np.isfinite(step)):
            raise DivergenceError("non-finite Newton step; likelihood appears monotone")
        halvings = 0
        while True:
            cand = beta + step
            ll_new, g_new, i_new = _loglik_grad_info(cand, Xc, rs)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * (1 + abs(ll)):
                break
            step = step / 2
            halvings += 1
            if halvings > 30:
                raise FitError("step halving failed to increase the partial likelihood")
        rel = abs(ll_new - ll) / (abs(ll) + 1e-300)
        small_step = np.max(np.abs(step)) < 1e-6 * (1 + np.max(np.abs(cand)))
        beta, ll, grad, info = cand, ll_new, g_new, i_new
        if np.max(np.abs(beta)) > MAX_ABS_COEF:
            raise DivergenceError(
                f"coefficient magnitude exceeded {MAX_ABS_COEF:g}; likelihood is monotone (separation)"
            )
        if small_step and (rel < 1e-9 or np.max(np.abs(grad)) < 1e-8):
            break
    else:
        if np.max(np.abs(beta)) > 10:
            raise DivergenceError("Newton-Raphson did not converge; likelihood appears monotone")
        raise FitError(f"Newton-Raphson did not converge in {max_iter} iterations")
    # A flat tail can stop the iteration with a vanishing gradient before the
    # magnitude bound trips; a finite maximum must drop off when beta doubles.
    if p and np.max(np.abs(beta)) > 5:
        ll_far = _loglik_grad_info(2 * beta, Xc, rs)[0]
        if ll_far >= ll - 1e-9 * (1 + abs(ll)):
            raise DivergenceError("partial likelihood does not decrease beyond the estimate; likelihood is monotone")
    return CoxModel(names, beta, ll, info, it, float(np.max(np.abs(grad))) if p else 0.0, ll_null)


def breslow_cumhaz(model, design, time, event):
    """Breslow cumulative baseline hazard (at covariate value zero)."""
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    rs = RiskSets(time, event)
    if rs.event_times.size == 0:
        raise FitError("no events: baseline hazard undefined")
    eta = X @ model.coef if X.shape[1] else np.zeros(X.shape[0])
    c = eta.max()
    s0 = rs.s0(np.exp(eta - c))
    inc = rs.d / s0 * np.exp(-c)
    return BaselineHazard(rs.event_times, np.cumsum(inc))


def nelson_aalen(time, event):
    rs = RiskSets(time, event)
    inc = rs.d / rs.s0(np.ones(rs.n))
    return BaselineHazard(rs.event_times, np.cumsum(inc))


def score_residuals(model, design, time, event):
    """Per-patient score residuals (rows sum to the score vector)."""
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    rs = RiskSets(time, event)
    Xc = X - X.mean(axis=0)
    eta = Xc @ model.coef
    e = np.exp(eta - eta.max())
    s0 = rs.s0(e)
    xbar = rs.s1(e, Xc) / s0[:, None]
    a = rs.cumulative(rs.d / s0)
    cterm = rs.cumulative((rs.d / s0)[:, None] * xbar)
    own = np.zeros_like(Xc)
    ev = rs.event == 1
    own[ev] = Xc[ev] - xbar[rs.upto[ev]]
    return own - e[:, None] * (Xc * a[:, None] - cterm)


def cluster_robust_variance(model, design, time, event, clusters):
    """Lin-Wei sandwich I^-1 (sum_c g_c g_c') I^-1 with g_c the summed score residuals."""
    clusters = np.asarray(clusters)
    L = score_residuals(model, design, time, event)
    if clusters.shape[0] != L.shape[0]:
        raise ValueError("cluster ids must cover every row")
    _, inv = np.unique(clusters, return_inverse=True)
    G = np.zeros((inv.max() + 1, L.shape[1]))
    np.add.at(G, inv, L)
    try:
        bread = np.linalg.inv(model.information)
    except np.linalg.LinAlgError:
        raise SingularityError("information matrix is singular", model.names) from None
    return bread @ (G.T @ G) @ bread
