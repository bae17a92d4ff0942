import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdmi.amputation import (AmputationSpec, ampute, missingness_probabilities, quantile_groups,
                             scale_scores, weighted_sum_score)
from hdmi.errors import DegenerateScoreError, InfeasibleSpecError

from conftest import toy_cohort


def test_default_group_probabilities():
    assert np.allclose(AmputationSpec().group_probabilities(), [0.2, 0.4, 0.6, 0.8])


def test_infeasible_spec_names_quantile():
    with pytest.raises(InfeasibleSpecError) as exc:
        AmputationSpec(prop=0.7)
    assert exc.value.quantile == 4


def test_bad_spec_shapes():
    with pytest.raises(InfeasibleSpecError):
        AmputationSpec(odds=(1, 2, 3))
    with pytest.raises(InfeasibleSpecError):
        AmputationSpec(prop=1.2)
    with pytest.raises(InfeasibleSpecError):
        AmputationSpec(odds=(0, 1, 1, 1))


def test_weighted_sum_and_scaling():
    w = weighted_sum_score([1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0], AmputationSpec())
    assert np.allclose(w, [1.0, 0.4, 1.4, 0.8])
    s = scale_scores(w)
    assert abs(s.mean()) < 1e-12 and abs(s.std(ddof=1) - 1) < 1e-12


def test_constant_score_is_degenerate():
    with pytest.raises(DegenerateScoreError):
        scale_scores(np.ones(10))


def test_quantile_groups_uneven_sizes():
    g = quantile_groups(np.arange(10.0), 4)
    assert np.bincount(g).tolist() == [3, 2, 3, 2]
    assert np.all(np.diff(g) >= 0)


def test_quantile_groups_ties_stable():
    g = quantile_groups(np.zeros(8), 4)
    assert g.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


@given(st.integers(4, 400), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_group_sizes_balanced(n, q):
    sizes = np.bincount(quantile_groups(np.random.default_rng(n).normal(size=n), q), minlength=q)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1


def test_mcar_when_odds_equal():
    rng = np.random.default_rng(0)
    u = (rng.random(1000) < 0.2).astype(float)
    p = missingness_probabilities(u, rng.lognormal(size=1000), AmputationSpec(odds=(1, 1, 1, 1)))
    assert np.allclose(p, 0.5)


def test_monotone_in_score():
    rng = np.random.default_rng(1)
    u = (rng.random(2000) < 0.2).astype(float)
    z2 = rng.lognormal(size=2000)
    spec = AmputationSpec()
    p = missingness_probabilities(u, z2, spec)
    w = weighted_sum_score(u, z2, spec)
    o = np.argsort(w, kind="stable")
    assert np.all(np.diff(p[o]) >= 0)


def test_ampute_only_changes_mask():
    c = toy_cohort(n=200)
    a = ampute(c, AmputationSpec(), seed=3)
    assert np.array_equal(a.z2, c.z2) and np.array_equal(a.time, c.time)
    assert 0 < a.mz2.sum() < 200
    b = ampute(c, AmputationSpec(), seed=3)
    assert np.array_equal(a.mz2, b.mz2)


def test_ampute_requires_u_and_full_z2():
    with pytest.raises(ValueError):
        ampute(toy_cohort(u=False), AmputationSpec())
    mz2 = np.zeros(30, dtype=np.int8)
    mz2[0] = 1
    with pytest.raises(ValueError):
        ampute(toy_cohort(mz2=mz2), AmputationSpec())


def test_spec_dict_round_trip():
    s = AmputationSpec(prop=0.3, odds=(1, 1, 2, 2), seed=9)
    assert AmputationSpec.from_dict(s.to_dict()) == s
