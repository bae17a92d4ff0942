"""MNAR amputation of z2 through a weighted sum score and quantile odds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScoreError, InfeasibleSpecError


@dataclass(frozen=True)
class AmputationSpec:
    """Weights of (u, z2) in the risk score, target missing proportion and
    relative odds of missingness per score quantile (lowest quantile first)."""

    weight_u: float = 0.8
    weight_z2: float = 0.2
    prop: float = 0.5
    n_quantiles: int = 4
    odds: tuple = (1.0, 2.0, 3.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        odds = tuple(float(o) for o in self.odds)
        object.__setattr__(self, "odds", odds)
        if not 0 < self.prop < 1:
            raise InfeasibleSpecError(f"prop must lie in (0, 1), got {self.prop}")
        if int(self.n_quantiles) != self.n_quantiles or self.n_quantiles < 1:
            raise InfeasibleSpecError("n_quantiles must be a positive integer")
        if len(odds) != self.n_quantiles:
            raise InfeasibleSpecError(
                f"odds has {len(odds)} entries but n_quantiles is {self.n_quantiles}"
            )
        if any(o <= 0 for o in odds):
            raise InfeasibleSpecError("odds must all be positive")
        self.group_probabilities()

    def group_probabilities(self):
        """Per-quantile missingness probabilities p_q = odds_q * prop * Q / sum(odds)."""
        odds = np.asarray(self.odds)
        probs = odds * self.prop * self.n_quantiles / odds.sum()
        over = np.flatnonzero(probs > 1.0)
        if over.size:
            q = int(over[0])
            raise InfeasibleSpecError(
                f"quantile {q + 1} would need missingness probability {probs[q]:.4g} > 1",
                quantile=q + 1,
            )
        return probs

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "odds" in d:
            d["odds"] = tuple(d["odds"])
        return cls(**d)

    def to_dict(self):
        return {
            "weight_u": self.weight_u, "weight_z2": self.weight_z2, "prop": self.prop,
            "n_quantiles": self.n_quantiles, "odds": list(self.odds), "seed": self.seed,
        }


def weighted_sum_score(u, z2, spec):
    u = np.asarray(u, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if u.shape != z2.shape:
        raise ValueError(f"u and z2 lengths differ ({u.shape} vs {z2.shape})")
    return spec.weight_u * u + spec.weight_z2 * z2


def scale_scores(wss):
    """Center and divide by the sample standard deviation (divisor n - 1)."""
    wss = np.asarray(wss, dtype=float)
    if wss.size < 2:
        raise DegenerateScoreError("need at least two scores to scale")
    sd = wss.std(ddof=1)
    if not sd > 0:
        raise DegenerateScoreError("weighted sum score has zero variance; all patients have identical risk")
    return (wss - wss.mean()) / sd


def quantile_groups(scaled, n_quantiles):
    """Group index (0 = lowest scores) per patient.

    Patients are stably sorted by (score, index).  With r = n mod Q, the r
    larger groups of size ceil(n/Q) sit at alternating positions from the
    bottom (0, 2, 4, ..., then 1, 3, ...).
    """
    scaled = np.asarray(scaled, dtype=float)
    n = scaled.shape[0]
    order = np.argsort(scaled, kind="stable")
    base, extra = divmod(n, n_quantiles)
    positions = list(range(0, n_quantiles, 2)) + list(range(1, n_quantiles, 2))
    sizes = np.full(n_quantiles, base)
    for q in positions[:extra]:
        sizes[q] += 1
    groups = np.empty(n, dtype=np.int64)
    groups[order] = np.repeat(np.arange(n_quantiles), sizes)
    return groups


def quantile_probabilities(scaled, spec):
    """Per-patient missingness probability from the patient's score quantile."""
    probs = spec.group_probabilities()
    return probs[quantile_groups(scaled, spec.n_quantiles)]


def missingness_probabilities(u, z2, spec):
    return quantile_probabilities(scale_scores(weighted_sum_score(u, z2, spec)), spec)


def ampute(cohort, spec, seed=None):
    """Return a copy of ``cohort`` whose z2 mask is drawn from the MNAR mechanism.

    z2 values are left untouched; only ``mz2`` changes.  ``seed`` overrides
    ``spec.seed``.
    """
    if cohort.u is None:
        raise ValueError("amputation needs u on the cohort")
    if np.any(cohort.mz2 == 1):
        raise ValueError("amputation needs a fully observed z2")
    p = missingness_probabilities(cohort.u, cohort.z2, spec)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    mask = (rng.random(cohort.n) < p).astype(np.int8)
    return cohort.replace(mz2=mask)
