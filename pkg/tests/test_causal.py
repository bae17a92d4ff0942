import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hdmi.causal import (estimate_ps, marginal_effect, match_1to1, rubin_pool, select_ps_covariates)
from hdmi.errors import MatchingError, SeparationError
from hdmi.features import assemble_candidates
from hdmi.tabular import Cohort


def cohort_from(x, time, event, z1=None, z2=None, names=None):
    n = len(x)
    z1 = np.zeros((n, 0)) if z1 is None else z1
    return Cohort(exposure=x, time=time, event=event, z1=z1,
                  z2=np.ones(n) if z2 is None else z2, mz2=np.zeros(n, dtype=np.int8),
                  z1_names=names or ())


# ------------------------------------------------------------- selection

def prognostic(n, seed, beta=1.0):
    rng = np.random.default_rng(seed)
    z1 = rng.normal(size=(n, 6))
    x = (rng.random(n) < 0.5).astype(float)
    t = rng.exponential(1 / np.exp(beta * z1[:, 0]))
    c = np.minimum(rng.exponential(2.0, n), 3.0)
    return cohort_from(x, np.minimum(t, c), (t <= c).astype(float), z1, rng.normal(size=n),
                       tuple(f"v{j}" for j in range(6)))


def test_planted_prognostic_selected():
    hits = 0
    for s in range(50):
        c = prognostic(300, s)
        names = select_ps_covariates(c, assemble_candidates(c, "baseline"), seed=s)
        hits += "v0" in names
        assert "exposure" not in names and names[-1] == "z2"
    assert hits >= 45


def test_noise_columns_rarely_selected():
    only = 0
    picked = np.zeros(6)
    for s in range(30):
        c = prognostic(300, 500 + s, beta=0.0)
        names = select_ps_covariates(c, assemble_candidates(c, "baseline"), seed=s)
        only += names == ("z2",)
        picked += [f"v{j}" in names for j in range(6)]
    assert picked.mean() / 30 < 0.25
    assert only >= 8


def test_selection_needs_completed_cohort():
    c = prognostic(50, 1)
    mz2 = np.zeros(50, dtype=np.int8)
    mz2[0] = 1
    with pytest.raises(ValueError):
        select_ps_covariates(c.replace(mz2=mz2), assemble_candidates(c, "baseline"))


# ------------------------------------------------------------- PS

def test_empty_ps_is_treated_fraction():
    c = prognostic(40, 2)
    assert np.allclose(estimate_ps(c, ()), c.exposure.mean())


def test_saturated_binary_ps():
    b = np.repeat([0.0, 1.0], 50)
    x = np.r_[np.repeat([1.0, 0.0], [10, 40]), np.repeat([1.0, 0.0], [35, 15])]
    c = cohort_from(x, np.ones(100), np.ones(100), b[:, None], names=("b",))
    ps = estimate_ps(c, ("b",))
    assert np.allclose(ps[:50], 0.2, atol=1e-8) and np.allclose(ps[50:], 0.7, atol=1e-8)


def test_ps_separation():
    b = np.repeat([0.0, 1.0], 10)
    c = cohort_from(b.copy(), np.ones(20), np.ones(20), b[:, None], names=("b",))
    with pytest.raises(SeparationError):
        estimate_ps(c, ("b",))


def test_u_refused_in_ps():
    c = prognostic(20, 3).replace(u=np.zeros(20))
    with pytest.raises(ValueError):
        estimate_ps(c, ("u",))


# ------------------------------------------------------------- matching

def test_exact_match_preferred():
    m = match_1to1(np.array([0.5, 0.5, 0.9]), np.array([1, 0, 0]), np.inf)
    assert m.pairs.tolist() == [[0, 1]]


def test_all_beyond_caliper():
    with pytest.raises(MatchingError):
        match_1to1(np.array([0.1, 0.9, 0.1, 0.9]), np.array([1, 0, 1, 0]), 0.1, mode="absolute")


def test_order_free_pairs():
    ps = np.array([0.4, 0.6, 0.41, 0.59])
    x = np.array([1, 1, 0, 0])
    for seed in range(20):
        m = match_1to1(ps, x, 10.0, seed=seed)
        assert sorted(map(tuple, m.pairs.tolist())) == [(0, 2), (1, 3)]


def test_empty_arm():
    with pytest.raises(MatchingError):
        match_1to1(np.array([0.3, 0.4]), np.array([1, 1]))


def test_logit_and_ps_nearest_neighbour_can_differ():
    # why the infinite-caliper scale-equivalence is not asserted
    ps = np.array([0.9, 0.8, 0.97])
    x = np.array([1, 0, 0])
    assert match_1to1(ps, x, np.inf, scale="logit").pairs.tolist() == [[0, 1]]
    assert match_1to1(ps, x, np.inf, scale="ps").pairs.tolist() == [[0, 2]]


@given(st.integers(2, 60), st.integers(2, 60), st.integers(0, 10_000), st.floats(0.01, 1.0))
@settings(max_examples=80, deadline=None)
def test_matching_invariants(nt, nc, seed, mult):
    rng = np.random.default_rng(seed)
    ps = rng.uniform(0.02, 0.98, nt + nc).round(2)  # ties on purpose
    x = np.r_[np.ones(nt), np.zeros(nc)]
    try:
        m = match_1to1(ps, x, mult, seed=seed)
    except MatchingError:
        return
    lg = np.log(ps / (1 - ps))
    t, c = m.pairs[:, 0], m.pairs[:, 1]
    assert np.all(np.abs(lg[t] - lg[c]) <= m.caliper + 1e-12)
    assert len(set(t)) == len(t) and len(set(c)) == len(c)
    assert np.all(x[t] == 1) and np.all(x[c] == 0)
    assert m.n_pairs + m.n_unmatched == nt and m.n_pairs <= min(nt, nc)
    again = match_1to1(ps, x, mult, seed=seed)
    assert np.array_equal(m.pairs, again.pairs)


def test_infinite_caliper_matches_everyone_while_comparators_last():
    rng = np.random.default_rng(0)
    ps = rng.uniform(0.1, 0.9, 30)
    x = np.r_[np.ones(10), np.zeros(20)]
    assert match_1to1(ps, x, np.inf).n_pairs == 10


# ------------------------------------------------------------- effect

def pairs_cohort(n_pairs, seed, log_hr=0.0):
    rng = np.random.default_rng(seed)
    t1 = rng.exponential(1 / np.exp(log_hr), n_pairs)
    t0 = rng.exponential(1.0, n_pairs)
    x = np.r_[np.ones(n_pairs), np.zeros(n_pairs)]
    c = cohort_from(x, np.r_[t1, t0], np.ones(2 * n_pairs))
    m = match_1to1(np.full(2 * n_pairs, 0.5), x, np.inf, seed=seed)
    return c, m


def test_null_effect_unbiased():
    est = [marginal_effect(*pairs_cohort(100, s)).log_hr for s in range(200)]
    assert abs(np.mean(est)) < 3 * np.std(est) / np.sqrt(200)


def test_planted_direction():
    assert marginal_effect(*pairs_cohort(200, 1, log_hr=0.7)).log_hr > 0
    assert marginal_effect(*pairs_cohort(200, 2, log_hr=-0.7)).log_hr < 0


def test_single_pair_no_crash():
    c = cohort_from(np.array([1.0, 0.0]), np.array([1.0, 2.0]), np.array([1.0, 0.0]))
    eff = marginal_effect(c, match_1to1(np.array([0.5, 0.5]), c.exposure))
    assert eff.degenerate or np.isfinite(eff.log_hr)


def test_no_events_degenerate():
    c = cohort_from(np.array([1.0, 0.0]), np.array([1.0, 2.0]), np.zeros(2))
    eff = marginal_effect(c, match_1to1(np.array([0.5, 0.5]), c.exposure))
    assert eff.degenerate and "no events" in eff.reason


# ------------------------------------------------------------- Rubin

def test_rubin_hand_example():
    r = rubin_pool([0.1, 0.3], [0.04, 0.04])
    assert r.theta == pytest.approx(0.2, abs=1e-15)
    assert r.within == pytest.approx(0.04, abs=1e-15)
    assert r.between == pytest.approx(0.02, abs=1e-15)
    assert abs(r.total - 0.07) < 1e-12


def test_rubin_zero_between():
    r = rubin_pool([0.2, 0.2, 0.2], [0.01, 0.02, 0.03])
    assert r.between == 0 and r.total == pytest.approx(0.02) and np.isinf(r.df)
    assert r.ci_high - r.theta == pytest.approx(stats.norm.ppf(0.975) * np.sqrt(0.02))


def test_rubin_permutation_invariant():
    q, u = [0.1, -0.2, 0.4, 0.05], [0.01, 0.02, 0.015, 0.03]
    a, b = rubin_pool(q, u), rubin_pool(q[::-1], u[::-1])
    assert a.theta == pytest.approx(b.theta, abs=1e-15) and a.total == pytest.approx(b.total, abs=1e-15)


def test_rubin_errors():
    with pytest.raises(ValueError, match=r"\[1\]"):
        rubin_pool([0.1, np.nan], [0.1, 0.1])
    with pytest.raises(ValueError):
        rubin_pool([0.1], [0.1])


def test_rubin_ci_shrinks_with_n():
    widths = []
    for n in (200, 2000):
        rng = np.random.default_rng(n)
        q = rng.normal(0, 1 / np.sqrt(n), 10)
        u = np.full(10, 4.0 / n)
        r = rubin_pool(q, u)
        widths.append(r.ci_high - r.ci_low)
    assert widths[1] < widths[0]
