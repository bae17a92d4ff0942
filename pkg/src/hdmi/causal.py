"""Propensity-score selection, estimation and matching, the marginal Cox effect
in the matched sample, and Rubin pooling across imputations."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.special import logit

from .errors import FitError, MatchingError
from .mi_engine import predictor_matrix
from .regfit import cluster_robust_variance, fit_cox, fit_lasso, fit_logistic

logger = logging.getLogger(__name__)

CALIPER_MODES = ("logit_sd", "absolute")


# ---------------------------------------------------------------- selection

def ps_lasso(cohort, candidates, seed=0, n_folds=5):
    """Cox LASSO of the outcome on exposure (unpenalized) and the candidates."""
    if "u" in candidates.names:
        raise ValueError("u must not be offered as a candidate")
    X = sp.hstack([sp.csc_matrix(cohort.exposure[:, None]), sp.csc_matrix(candidates.values)], format="csc")
    names = ("exposure",) + tuple(candidates.names)
    pf = np.r_[0.0, np.ones(candidates.n_cols)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_lasso("cox", X, (cohort.time, cohort.event), pf, n_folds=n_folds, seed=seed, names=names)
    for w in caught:
        logger.debug("%s", w.message)
    return fit


def select_ps_covariates(cohort, candidates, seed=0, n_folds=5):
    """PS covariates: the outcome-LASSO selection without exposure, plus z2."""
    if np.any(cohort.mz2 == 1):
        raise ValueError("PS covariate selection needs a completed cohort")
    fit = ps_lasso(cohort, candidates, seed, n_folds)
    return tuple(c for c in fit.selected if c != "exposure") + ("z2",)


# ---------------------------------------------------------------- PS model

def covariate_matrix(cohort, names, candidates=None, allow_u=False):
    cols = []
    rest = []
    order = []
    for name in names:
        if name == "z2":
            if np.any(cohort.mz2 == 1):
                raise ValueError("z2 requested but the cohort still has masked values")
            order.append(("z2", None))
        elif name == "u":
            if not allow_u or cohort.u is None:
                raise ValueError("u is unmeasured and cannot enter a PS model")
            order.append(("u", None))
        else:
            order.append(("other", len(rest)))
            rest.append(name)
    other = predictor_matrix(cohort, rest, candidates) if rest else None
    for kind, j in order:
        if kind == "z2":
            cols.append(np.asarray(cohort.z2, dtype=float))
        elif kind == "u":
            cols.append(np.asarray(cohort.u, dtype=float))
        else:
            cols.append(other[:, j])
    return np.column_stack(cols) if cols else np.zeros((cohort.n, 0))


def estimate_ps(cohort, names, candidates=None, allow_u=False):
    """Fitted probabilities of exposure from an ML logistic model on ``names``."""
    names = tuple(names)
    X = covariate_matrix(cohort, names, candidates, allow_u)
    if not names:
        return np.full(cohort.n, float(np.mean(cohort.exposure)))
    model = fit_logistic(X, cohort.exposure, names=names)
    return model.predict(X)


# ---------------------------------------------------------------- matching

@dataclass(frozen=True)
class MatchResult:
    pairs: np.ndarray  # (n_pairs, 2): treated row, comparator row
    caliper: float
    n_unmatched: int
    mode: str = "logit_sd"

    @property
    def n_pairs(self):
        return int(self.pairs.shape[0])

    def rows(self):
        return self.pairs.ravel()

    def clusters(self):
        return np.repeat(np.arange(self.n_pairs), 2)


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def match_1to1(ps, exposure, caliper_sd_multiple=0.2, seed=0, mode="logit_sd", scale=None):
    """Greedy 1:1 nearest-neighbour matching without replacement.

    ``mode="logit_sd"``: distances on the logit-PS scale, caliper =
    multiple x sample SD of logit PS.  ``mode="absolute"``: distances on the
    PS scale, caliper = the multiple itself.  ``scale`` ("logit" or "ps")
    overrides the distance scale.  Treated units are visited in a seeded
    random order; equidistant comparators are chosen uniformly at random.
    """
    if mode not in CALIPER_MODES:
        raise ValueError(f"caliper mode must be one of {CALIPER_MODES}")
    ps = np.asarray(ps, dtype=float)
    exposure = np.asarray(exposure)
    if np.any((ps <= 0) | (ps >= 1)):
        raise ValueError("propensity scores must lie strictly in (0, 1)")
    treated = np.flatnonzero(exposure == 1)
    comps = np.flatnonzero(exposure == 0)
    if treated.size == 0 or comps.size == 0:
        raise MatchingError("both exposure arms must be nonempty")
    scale = scale or ("logit" if mode == "logit_sd" else "ps")
    score = logit(ps) if scale == "logit" else ps
    if np.isinf(caliper_sd_multiple):
        caliper = np.inf
    elif mode == "logit_sd":
        caliper = caliper_sd_multiple * float(np.std(logit(ps), ddof=1)) if ps.size > 1 else 0.0
    else:
        caliper = float(caliper_sd_multiple)

    rng = np.random.default_rng(seed)
    visit = rng.permutation(treated)
    # comparators grouped by identical score; members in random order per group
    shuffled = rng.permutation(comps)
    sc = score[shuffled]
    srt = np.argsort(sc, kind="stable")
    shuffled, sc = shuffled[srt], sc[srt]
    uniq, start, counts = np.unique(sc, return_index=True, return_counts=True)
    G = uniq.size
    taken = np.zeros(G, dtype=np.int64)
    right = np.arange(G + 1)  # next available group >= g (G = none)
    left = np.arange(G + 1)   # shifted by one: left[g + 1] -> available group <= g, 0 = none

    pairs = []
    n_unmatched = 0
    for t in visit:
        s = score[t]
        g = int(np.searchsorted(uniq, s))
        gr = _find(right, g)
        gl = _find(left, g) - 1  # groups <= g - 1
        dr = uniq[gr] - s if gr < G else np.inf
        dl = s - uniq[gl] if gl >= 0 else np.inf
        if dr < dl or (dr == dl and dr < np.inf and rng.random() < 0.5):
            best, d = gr, dr
        else:
            best, d = gl, dl
        if not d <= caliper:
            n_unmatched += 1
            continue
        c = shuffled[start[best] + taken[best]]
        taken[best] += 1
        if taken[best] == counts[best]:
            right[best] = best + 1
            left[best + 1] = best
        pairs.append((t, c))
    if not pairs:
        raise MatchingError(f"no treated unit has a comparator within caliper {caliper:.4g}")
    return MatchResult(np.asarray(pairs, dtype=np.int64), caliper, n_unmatched, mode)


# ---------------------------------------------------------------- effect

@dataclass(frozen=True)
class EffectEstimate:
    log_hr: float
    variance: float
    n_pairs: int
    n_events: int
    degenerate: bool = False
    reason: str = ""


def marginal_effect(cohort, matches):
    """Cox model of the outcome on exposure alone in the matched sample, with
    pair-clustered robust variance.  Failures come back flagged as degenerate."""
    rows = matches.rows()
    x = cohort.exposure[rows]
    time = cohort.time[rows]
    event = cohort.event[rows]
    n_events = int(event.sum())
    if n_events == 0:
        return EffectEstimate(np.nan, np.nan, matches.n_pairs, 0, True, "no events in matched sample")
    try:
        model = fit_cox(x[:, None], time, event, names=("exposure",))
        var = cluster_robust_variance(model, x[:, None], time, event, matches.clusters())
    except FitError as exc:
        return EffectEstimate(np.nan, np.nan, matches.n_pairs, n_events, True, str(exc))
    v = float(var[0, 0])
    if not (np.isfinite(v) and v > 0):
        return EffectEstimate(float(model.coef[0]), v, matches.n_pairs, n_events, True,
                              "non-positive robust variance")
    return EffectEstimate(float(model.coef[0]), v, matches.n_pairs, n_events)


# ---------------------------------------------------------------- pooling

@dataclass(frozen=True)
class PooledEstimate:
    theta: float
    within: float
    between: float
    total: float
    df: float
    m: int
    ci_low: float
    ci_high: float

    @property
    def hr(self):
        return float(np.exp(self.theta))

    @property
    def hr_ci(self):
        return float(np.exp(self.ci_low)), float(np.exp(self.ci_high))


def rubin_pool(estimates, variances, level=0.95):
    """Rubin's rules on the log-HR scale.  The interval uses a t quantile with
    the classic large-sample degrees of freedom, or the normal quantile when
    the between-imputation variance is zero."""
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    if q.shape != u.shape or q.ndim != 1:
        raise ValueError("estimates and variances must be 1-D and of equal length")
    m = q.size
    if m < 2:
        raise ValueError("Rubin pooling needs at least two imputations")
    bad = np.flatnonzero(~np.isfinite(q) | ~np.isfinite(u))
    if bad.size:
        raise ValueError(f"non-finite estimate or variance in imputations {bad.tolist()}")
    theta = float(q.mean())
    W = float(u.mean())
    # identical estimates must give B = 0 exactly, not mean-rounding residue
    B = 0.0 if np.all(q == q[0]) else float(q.var(ddof=1))
    T = W + (1 + 1 / m) * B
    alpha = 1 - level
    if B > 0:
        df = (m - 1) * (1 + W / ((1 + 1 / m) * B)) ** 2
        crit = float(stats.t.ppf(1 - alpha / 2, df))
    else:
        df = np.inf
        crit = float(stats.norm.ppf(1 - alpha / 2))
    half = crit * np.sqrt(T)
    return PooledEstimate(theta, W, B, T, float(df), m, float(theta - half), float(theta + half))
