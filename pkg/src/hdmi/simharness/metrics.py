"""Performance measures over simulation replicates, with Monte Carlo SEs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import HDMIError

Z975 = 1.959963984540054


class MetricsError(HDMIError, ValueError):
    pass


@dataclass(frozen=True)
class MetricsSummary:
    """Log-HR scale performance of one model.

    Monte Carlo SEs: bias sqrt(S^2/n); variance S^2 sqrt(2/(n-1)); MSE
    sqrt(sum((d_i^2 - MSE)^2) / (n(n-1))) carried to RMSE by the delta
    method; coverage sqrt(c(1-c)/n).
    """

    model: str
    n_sim: int
    n_degenerate: int
    bias: float
    bias_mcse: float
    rmse: float
    rmse_mcse: float
    variance: float
    variance_mcse: float
    coverage: float
    coverage_mcse: float

    def interval(self, metric):
        """Wald Monte Carlo 95% interval, clipped to the metric's range."""
        est = getattr(self, metric)
        se = getattr(self, f"{metric}_mcse")
        lo, hi = est - Z975 * se, est + Z975 * se
        if metric == "coverage":
            return max(lo, 0.0), min(hi, 1.0)
        if metric in ("rmse", "variance"):
            return max(lo, 0.0), hi
        return lo, hi

    def as_row(self):
        row = asdict(self)
        for m in ("bias", "rmse", "variance", "coverage"):
            lo, hi = self.interval(m)
            row[f"{m}_lower"] = lo
            row[f"{m}_upper"] = hi
        return row


def compute_metrics(estimates, cis, theta_true, model="model", n_degenerate=0):
    """Bias, RMSE, variance and coverage of ``estimates`` around ``theta_true``.

    ``cis`` is an (n, 2) array of interval limits.  Non-finite estimates are
    rejected; filter degenerate replicates out first and pass their count.
    """
    est = np.asarray(estimates, dtype=float)
    ci = np.asarray(cis, dtype=float).reshape(-1, 2)
    n = est.size
    if n < 2:
        raise MetricsError(f"need at least 2 usable replicates, got {n}")
    if ci.shape[0] != n:
        raise MetricsError("one interval per estimate required")
    if not np.all(np.isfinite(est)):
        raise MetricsError("non-finite estimates; drop degenerate replicates first")
    d = est - theta_true
    bias = float(d.mean())
    mse = float(np.mean(d * d))
    rmse = float(np.sqrt(mse))
    var = float(est.var(ddof=1))
    covered = (ci[:, 0] <= theta_true) & (theta_true <= ci[:, 1])
    cov = float(covered.mean())
    mse_mcse = float(np.sqrt(np.sum((d * d - mse) ** 2) / (n * (n - 1))))
    return MetricsSummary(
        model=model, n_sim=n, n_degenerate=int(n_degenerate),
        bias=bias, bias_mcse=float(np.sqrt(var / n)),
        rmse=rmse, rmse_mcse=mse_mcse / (2 * rmse) if rmse > 0 else 0.0,
        variance=var, variance_mcse=var * float(np.sqrt(2.0 / (n - 1))),
        coverage=cov, coverage_mcse=float(np.sqrt(cov * (1 - cov) / n)),
    )


def bootstrap_less(a, b, statistic, n_boot=2000, seed=0):
    """One-sided paired bootstrap p-value for statistic(a) < statistic(b).

    ``a`` and ``b`` are per-replicate values from the same replicates; rows
    are resampled jointly.  Returns the fraction of resamples with
    statistic(a) >= statistic(b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, a.size, (n_boot, a.size))
    sa = np.array([statistic(a[i]) for i in idx])
    sb = np.array([statistic(b[i]) for i in idx])
    return float(np.mean(sa >= sb))


def abs_bias(theta_true):
    return lambda x: abs(float(np.mean(x)) - theta_true)


def sample_variance(x):
    return float(np.var(x, ddof=1))
