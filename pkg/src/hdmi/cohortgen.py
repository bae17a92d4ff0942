"""Synthetic base cohorts and plasmode replicates.

The synthetic base stands in for an eligible complete cohort: thirteen
investigator covariates, a binary unmeasured confounder ``u``, a lognormal
lab value ``z2`` that depends on ``u``, a logistic exposure and an
exponential-baseline Cox outcome under exponential plus administrative
censoring.  Candidate blocks are generated from latent scores so that chosen
columns act as proxies of ``u`` and ``z2``.

Plasmode replicates refit Cox models for the outcome and for censoring on the
base, swap in the investigator-chosen exposure effect, and redraw event and
censoring times by inverting the Breslow cumulative hazards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import bisect, brentq
from scipy.special import expit, ndtri

from .errors import CalibrationError, ConfigError, FitError
from .regfit import BaselineHazard, breslow_cumhaz, fit_cox
from .tabular import BINARY, BINARY_SPARSE, CONTINUOUS, CONTINUOUS_DENSE, Cohort, CovariateBlock

logger = logging.getLogger(__name__)

# (name, kind, generator, parameter).  The atrial fibrillation entry of the
# usual covariate list is replaced by heart failure because ``u`` already
# plays that role here.
Z1_SPEC = (
    ("dem_age", CONTINUOUS, "age", (75.0, 7.0)),
    ("c_ed", CONTINUOUS, "poisson", 1.0),
    ("c_gnrc_cnt", CONTINUOUS, "poisson", 10.0),
    ("c_heart_failure", BINARY, "bernoulli", 0.15),
    ("c_flu_vaccine", BINARY, "bernoulli", 0.64),
    ("c_foot_ulcer", BINARY, "bernoulli", 0.039),
    ("c_glaucoma_or_cataract", BINARY, "bernoulli", 0.53),
    ("c_ischemic_stroke", BINARY, "bernoulli", 0.12),
    ("c_h2ra", BINARY, "bernoulli", 0.072),
    ("c_acei", BINARY, "bernoulli", 0.32),
    ("c_arb", BINARY, "bernoulli", 0.17),
    ("c_statin", BINARY, "bernoulli", 0.58),
    ("c_spironolactone", BINARY, "bernoulli", 0.021),
)
Z1_NAMES = tuple(s[0] for s in Z1_SPEC)

DEFAULT_EXPOSURE_COEF = {
    "dem_age": 0.03, "c_ed": 0.3, "c_gnrc_cnt": 0.05, "c_heart_failure": 0.3,
    "c_foot_ulcer": 0.5, "c_ischemic_stroke": 0.4, "c_statin": -0.2,
    "u": 1.0, "z2": 1.0,
}
DEFAULT_OUTCOME_COEF = {
    "dem_age": 0.03, "c_ed": 0.2, "c_gnrc_cnt": 0.04, "c_heart_failure": 0.3,
    "c_foot_ulcer": 0.3, "c_ischemic_stroke": 0.3, "c_acei": 0.2, "c_arb": 0.2,
    "c_spironolactone": 0.3, "u": 0.8, "z2": 1.5,
}


@dataclass(frozen=True)
class ProxyBlockConfig:
    """One candidate block.

    Binary blocks: the first ``n_u_proxies`` columns load on ``u``, the next
    ``n_z2_proxies`` on ``z2``; the rest are noise.  A column is 1 when its
    latent score exceeds the quantile giving its target prevalence, drawn
    log-uniformly from ``prevalence_range``.  Dense blocks mix ``n_factors``
    latent factors, the first two of which are ``u`` and ``z2`` scores
    weighted by ``rho_u``/``rho_z2``.
    """

    name: str
    kind: str = BINARY_SPARSE
    n_columns: int = 500
    n_u_proxies: int = 10
    n_z2_proxies: int = 10
    rho_u: float = 0.8
    rho_z2: float = 0.5
    prevalence_range: tuple = (0.003, 0.3)
    n_factors: int = 8
    prefix: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (BINARY_SPARSE, CONTINUOUS_DENSE):
            raise ConfigError(f"unknown block kind {self.kind!r}")
        for r in (self.rho_u, self.rho_z2):
            if not -1 < r < 1:
                raise ConfigError("latent correlations must lie in (-1, 1)")
        if self.rho_u ** 2 + self.rho_z2 ** 2 >= 1 and self.kind == CONTINUOUS_DENSE:
            raise ConfigError("rho_u^2 + rho_z2^2 must be < 1 for a dense block")
        if self.n_u_proxies + self.n_z2_proxies > self.n_columns:
            raise ConfigError(f"block {self.name!r} has more proxies than columns")
        lo, hi = self.prevalence_range
        if not 0 < lo <= hi < 1:
            raise ConfigError("prevalence_range must satisfy 0 < lo <= hi < 1")
        object.__setattr__(self, "prevalence_range", (float(lo), float(hi)))

    @property
    def column_prefix(self):
        if self.prefix is not None:
            return self.prefix
        return {"claims": "code", "unigram": "tok", "sentence": "e"}.get(self.name, self.name)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    seed: int = 0
    u_prevalence: float = 0.18
    z2_log_mean: float = -0.2
    z2_log_sd: float = 0.25
    z2_u_shift: float = 0.25
    treated_fraction: float = 0.685
    exposure_coef: dict = field(default_factory=lambda: dict(DEFAULT_EXPOSURE_COEF))
    outcome_coef: dict = field(default_factory=lambda: dict(DEFAULT_OUTCOME_COEF))
    hr_true: float = 1.0
    event_proportion: Optional[float] = 0.3
    baseline_rate: Optional[float] = None
    censor_rate: float = 1.0 / 730.0
    followup_days: float = 365.0
    blocks: tuple = ()

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not 0 < self.u_prevalence < 1:
            raise ConfigError("u_prevalence must lie in (0, 1)")
        if not 0 < self.treated_fraction < 1:
            raise ConfigError("treated_fraction must lie in (0, 1)")
        if self.hr_true <= 0:
            raise ConfigError("hr_true must be positive")
        if self.z2_log_sd <= 0:
            raise ConfigError("z2_log_sd must be positive")
        if self.censor_rate < 0 or self.followup_days <= 0:
            raise ConfigError("censor_rate must be >= 0 and followup_days > 0")
        if self.event_proportion is None:
            if self.baseline_rate is None or self.baseline_rate <= 0:
                raise ConfigError("baseline hazard is zero: set event_proportion or a positive baseline_rate")
        elif not 0 < self.event_proportion < 1:
            raise ConfigError("event_proportion must lie in (0, 1)")
        known = set(Z1_NAMES) | {"u", "z2"}
        for label, coefs in (("exposure_coef", self.exposure_coef), ("outcome_coef", self.outcome_coef)):
            bad = set(coefs) - known
            if bad:
                raise ConfigError(f"{label} has unknown covariates: {sorted(bad)}")
        blocks = tuple(b if isinstance(b, ProxyBlockConfig) else ProxyBlockConfig(**b) for b in self.blocks)
        if len({b.name for b in blocks}) != len(blocks):
            raise ConfigError("block names must be unique")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown synthetic-cohort settings: {sorted(extra)}")
        for key in ("exposure_coef", "outcome_coef"):
            if key in d and d[key] is not None:
                merged = dict(DEFAULT_EXPOSURE_COEF if key == "exposure_coef" else DEFAULT_OUTCOME_COEF)
                merged.update(d[key])
                d[key] = merged
        if "blocks" in d:
            d["blocks"] = tuple(
                ProxyBlockConfig(**{**b, "prevalence_range": tuple(b.get("prevalence_range", (0.003, 0.3)))})
                for b in d["blocks"]
            )
        return cls(**d)


def _standardize_binary(u, p):
    return (u - p) / np.sqrt(p * (1 - p))


def _draw_z1(rng, n):
    cols = []
    for name, kind, gen, par in Z1_SPEC:
        if gen == "age":
            cols.append(np.clip(np.round(rng.normal(par[0], par[1], n)), 65, 100))
        elif gen == "poisson":
            cols.append(rng.poisson(par, n).astype(float))
        else:
            cols.append((rng.random(n) < par).astype(float))
    return np.column_stack(cols)


def _linear(coefs, z1, u, z2):
    lp = np.zeros(z1.shape[0])
    for j, name in enumerate(Z1_NAMES):
        lp += coefs.get(name, 0.0) * z1[:, j]
    return lp + coefs.get("u", 0.0) * u + coefs.get("z2", 0.0) * z2


def _event_probability(log_rate, lp, censor_rate, horizon):
    # P(T < min(C, A)) with T ~ Exp(r), C ~ Exp(c), A fixed
    r = np.exp(log_rate + lp)
    tot = r + censor_rate
    return np.mean(r / tot * -np.expm1(-tot * horizon))


def solve_baseline_rate(lp, target, censor_rate, horizon):
    """Exponential baseline rate giving expected event proportion ``target``."""
    f = lambda a: _event_probability(a, lp, censor_rate, horizon) - target
    lo, hi = -60.0, 20.0
    if f(lo) > 0 or f(hi) < 0:
        raise ConfigError(f"event proportion {target} is unattainable")
    return float(np.exp(brentq(f, lo, hi, xtol=1e-12)))


def latent_proxy_scores(u_std, z2_std, cfg, rng):
    """Latent scores for a binary block: n x n_columns, unit variance per column."""
    n = u_std.shape[0]
    L = rng.standard_normal((n, cfg.n_columns))
    k_u, k_z = cfg.n_u_proxies, cfg.n_z2_proxies
    if k_u:
        L[:, :k_u] = cfg.rho_u * u_std[:, None] + np.sqrt(1 - cfg.rho_u ** 2) * L[:, :k_u]
    if k_z:
        s = slice(k_u, k_u + k_z)
        L[:, s] = cfg.rho_z2 * z2_std[:, None] + np.sqrt(1 - cfg.rho_z2 ** 2) * L[:, s]
    return L


def _binary_block(u_std, z2_std, cfg, rng):
    n = u_std.shape[0]
    L = latent_proxy_scores(u_std, z2_std, cfg, rng)
    lo, hi = np.log(cfg.prevalence_range[0]), np.log(cfg.prevalence_range[1])
    prev = np.exp(rng.uniform(lo, hi, cfg.n_columns))
    # latent columns are approximately standard normal
    vals = sp.csc_matrix((L > ndtri(1 - prev)[None, :]).astype(float))
    width = len(str(cfg.n_columns))
    names = [f"{cfg.column_prefix}{j + 1:0{width}d}" for j in range(cfg.n_columns)]
    return CovariateBlock(cfg.name, BINARY_SPARSE, names, vals)


def _dense_block(u_std, z2_std, cfg, rng):
    n = u_std.shape[0]
    k = max(cfg.n_factors, 2)
    F = rng.standard_normal((n, k))
    F[:, 0] = cfg.rho_u * u_std + np.sqrt(1 - cfg.rho_u ** 2) * F[:, 0]
    F[:, 1] = cfg.rho_z2 * z2_std + np.sqrt(1 - cfg.rho_z2 ** 2) * F[:, 1]
    W = rng.standard_normal((k, cfg.n_columns)) / np.sqrt(k)
    E = F @ W + 0.5 * rng.standard_normal((n, cfg.n_columns))
    width = len(str(cfg.n_columns))
    names = [f"{cfg.column_prefix}{j + 1:0{width}d}" for j in range(cfg.n_columns)]
    return CovariateBlock(cfg.name, CONTINUOUS_DENSE, names, E)


def generate_synthetic_base(cfg):
    """Draw a complete base cohort from ``cfg`` (deterministic in ``cfg.seed``)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    z1 = _draw_z1(rng, n)
    u = (rng.random(n) < cfg.u_prevalence).astype(float)
    z2 = np.exp(cfg.z2_log_mean + cfg.z2_u_shift * u + cfg.z2_log_sd * rng.standard_normal(n))

    lp_x = _linear(cfg.exposure_coef, z1, u, z2)
    b0 = brentq(lambda a: expit(a + lp_x).mean() - cfg.treated_fraction, -100, 100, xtol=1e-12)
    x = (rng.random(n) < expit(b0 + lp_x)).astype(float)

    lp_y = _linear(cfg.outcome_coef, z1, u, z2) + np.log(cfg.hr_true) * x
    if cfg.event_proportion is not None:
        rate = solve_baseline_rate(lp_y, cfg.event_proportion, cfg.censor_rate, cfg.followup_days)
    else:
        rate = cfg.baseline_rate
    t_event = rng.standard_exponential(n) / (rate * np.exp(lp_y))
    if cfg.censor_rate > 0:
        t_cens = rng.standard_exponential(n) / cfg.censor_rate
    else:
        t_cens = np.full(n, np.inf)
    t_cens = np.minimum(t_cens, cfg.followup_days)
    event = (t_event <= t_cens).astype(float)
    time = np.minimum(t_event, t_cens)

    u_std = _standardize_binary(u, cfg.u_prevalence)
    z2_std = (np.log(z2) - cfg.z2_log_mean - cfg.z2_u_shift * cfg.u_prevalence) / np.sqrt(
        cfg.z2_log_sd ** 2 + cfg.z2_u_shift ** 2 * cfg.u_prevalence * (1 - cfg.u_prevalence)
    )
    blocks = {}
    for bcfg in cfg.blocks:
        make = _binary_block if bcfg.kind == BINARY_SPARSE else _dense_block
        blocks[bcfg.name] = make(u_std, z2_std, bcfg, rng)

    return Cohort(
        exposure=x, time=time, event=event, z1=z1, z2=z2, mz2=np.zeros(n, dtype=np.int8),
        z1_names=Z1_NAMES, z1_kinds=tuple(s[1] for s in Z1_SPEC), u=u, blocks=blocks,
    )


# ---------------------------------------------------------------- plasmode

ROLES = ("exposure", "z2", "u", "z1")


@dataclass(frozen=True)
class OutcomeModelSpec:
    covariate_roles: tuple = ROLES
    hr_true: float = 1.0

    def __post_init__(self):
        roles = tuple(self.covariate_roles)
        bad = set(roles) - set(ROLES)
        if bad:
            raise ConfigError(f"unknown covariate roles {sorted(bad)}")
        if not self.hr_true > 0:
            raise ConfigError("hr_true must be positive")
        object.__setattr__(self, "covariate_roles", roles)


def outcome_design(cohort, spec):
    """Design matrix and names for the generating Cox models."""
    cols, names = [], []
    for role in spec.covariate_roles:
        if role == "exposure":
            cols.append(cohort.exposure[:, None])
            names.append("exposure")
        elif role == "z2":
            if np.any(cohort.mz2 == 1):
                raise ValueError("outcome models need a fully observed z2")
            cols.append(cohort.z2[:, None])
            names.append("z2")
        elif role == "u":
            if cohort.u is None:
                raise ValueError("cohort carries no u")
            cols.append(cohort.u[:, None])
            names.append("u")
        else:
            cols.append(cohort.z1)
            names.extend(cohort.z1_names)
    X = np.hstack(cols) if cols else np.zeros((cohort.n, 0))
    return X, tuple(names)


def fit_outcome_model(cohort, spec=OutcomeModelSpec()):
    X, names = outcome_design(cohort, spec)
    model = fit_cox(X, cohort.time, cohort.event, names=names)
    return model, breslow_cumhaz(model, X, cohort.time, cohort.event)


def fit_censoring_model(cohort, spec=OutcomeModelSpec()):
    """Cox model for the censoring process (censoring counted as the event)."""
    X, names = outcome_design(cohort, spec)
    flipped = 1.0 - cohort.event
    if flipped.sum() < 1:
        raise FitError("no censored observations: censoring model undefined")
    model = fit_cox(X, cohort.time, flipped, names=names)
    return model, breslow_cumhaz(model, X, cohort.time, flipped)


def invert_cumhaz(bh, h):
    """Smallest time with cumulative hazard >= h; ``np.inf`` beyond follow-up."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("cumulative hazard target must be nonnegative")
    idx = np.searchsorted(bh.cumhaz, h, side="left")
    times = np.append(bh.times, np.inf)
    out = times[idx]
    return out if out.ndim else float(out)


def expected_events(bh, lp, horizon, kappa=1.0):
    return float(np.sum(-np.expm1(-kappa * bh.at(horizon) * np.exp(lp))))


def calibrate_event_rate(bh, cohort, model, target_events, horizon=None, spec=OutcomeModelSpec(),
                         kappa_max=1e12):
    """Scale ``bh`` by kappa so the model-implied expected event count equals ``target_events``.

    ``horizon`` defaults to each patient's observed follow-up time.
    """
    X, names = outcome_design(cohort, spec)
    if tuple(names) != tuple(model.names):
        raise ValueError("model was not fitted on this design")
    lp = X @ model.coef
    tau = cohort.time if horizon is None else np.broadcast_to(np.asarray(horizon, float), (cohort.n,))
    H = bh.at(tau) * np.exp(lp)
    sup = float(np.sum(H > 0))
    if not 0 < target_events < sup:
        raise CalibrationError(f"target of {target_events:g} expected events is unattainable",
                               achievable=(0.0, sup))
    f = lambda logk: float(np.sum(-np.expm1(-np.exp(logk) * H))) - target_events
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo *= 2
        if lo < -700:
            raise CalibrationError("calibration bracket underflowed", achievable=(0.0, sup))
    while f(hi) < 0:
        hi *= 2
        if np.exp(hi) > kappa_max:
            raise CalibrationError("kappa exceeds kappa_max", achievable=(0.0, f(np.log(kappa_max)) + target_events))
    logk = bisect(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    return bh.scaled(np.exp(logk))


def plasmode_event_probability(bh, cbh, lp, lp_c, max_followup, kappa=1.0):
    """Exact per-patient P(T_e <= T_c) for times drawn as in :func:`generate_plasmode`."""
    t = bh.times
    eh = np.exp(lp)[:, None]
    H = np.concatenate([[0.0], bh.cumhaz])[None, :] * kappa * eh
    p_at = np.exp(-H[:, :-1]) - np.exp(-H[:, 1:])  # P(T_e = t_k)
    # P(T_c >= t_k): censoring hazard accumulated strictly before t_k
    hc_before = np.concatenate([[0.0], cbh.cumhaz])[np.searchsorted(cbh.times, t, side="left")]
    surv_c = np.exp(-np.exp(lp_c)[:, None] * hc_before[None, :])
    surv_c[:, t > max_followup] = 0.0
    return (p_at * surv_c).sum(axis=1)


def calibrate_plasmode_event_rate(bh, cbh, lp, lp_c, max_followup, target_events):
    """Scale ``bh`` so the expected plasmode event count, censoring included,
    equals ``target_events``."""
    f = lambda logk: plasmode_event_probability(bh, cbh, lp, lp_c, max_followup, np.exp(logk)).sum() - target_events
    sup = f(40.0) + target_events
    if not 0 < target_events < sup:
        raise CalibrationError(f"target of {target_events:g} expected events is unattainable",
                               achievable=(0.0, sup))
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo *= 2
    while f(hi) < 0:
        hi *= 2
    logk = bisect(f, lo, hi, xtol=1e-13, maxiter=200)
    return bh.scaled(np.exp(logk))


@dataclass(frozen=True)
class PlasmodeModels:
    """Fitted generating models for one base cohort."""

    spec: OutcomeModelSpec
    outcome: tuple  # (CoxModel, BaselineHazard)
    censor: tuple
    max_followup: float


def prepare_plasmode(base, spec=OutcomeModelSpec(), calibrate="censoring"):
    """Fit outcome and censoring models, set the exposure effect and recalibrate
    the outcome baseline hazard to the base cohort's observed event count.

    ``calibrate``: "censoring" matches the expected replicate event count with
    the censoring draw accounted for; "horizon" uses each patient's observed
    follow-up as a fixed horizon (:func:`calibrate_event_rate`); None skips it.
    """
    model, bh = fit_outcome_model(base, spec)
    cmodel, cbh = fit_censoring_model(base, spec)
    if "exposure" in model.names:
        model = model.with_coef("exposure", np.log(spec.hr_true))
    target = float(base.event.sum())
    max_fu = float(base.time.max())
    if calibrate == "censoring":
        X, _ = outcome_design(base, spec)
        bh = calibrate_plasmode_event_rate(bh, cbh, X @ model.coef, X @ cmodel.coef, max_fu, target)
    elif calibrate == "horizon":
        bh = calibrate_event_rate(bh, base, model, target, spec=spec)
    elif calibrate is not None:
        raise ConfigError(f"unknown calibration mode {calibrate!r}")
    return PlasmodeModels(spec, (model, bh), (cmodel, cbh), max_fu)


def generate_plasmode(base, outcome, censor, hr_true=1.0, seed=0, resample=True,
                      spec=OutcomeModelSpec(), max_followup=None):
    """One plasmode replicate of ``base``.

    Patients are resampled with replacement when ``resample`` is true, else
    the base rows are reused with fresh outcome draws.  Censoring times that
    fall beyond the censoring model's support are set to ``max_followup``
    (default: the base cohort's longest follow-up).
    """
    if not hr_true > 0:
        raise ConfigError("hr_true must be positive")
    model, bh = outcome
    cmodel, cbh = censor
    if "exposure" in model.names:
        model = model.with_coef("exposure", np.log(hr_true))
    if max_followup is None:
        max_followup = float(base.time.max())
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, base.n, base.n) if resample else np.arange(base.n)
    cohort = base.take(rows)
    X, _ = outcome_design(cohort, spec)
    e_draw = rng.standard_exponential(base.n)
    c_draw = rng.standard_exponential(base.n)
    t_e = invert_cumhaz(bh, e_draw / np.exp(X @ model.coef))
    t_c = np.minimum(invert_cumhaz(cbh, c_draw / np.exp(X @ cmodel.coef)), max_followup)
    event = (t_e <= t_c).astype(float)
    time = np.minimum(t_e, t_c)
    return cohort.replace(time=time, event=event, mz2=np.zeros(base.n, dtype=np.int8), imputed=None)
