"""Scenario runner: plasmode replicates x comparator models -> metrics and files."""

from __future__ import annotations

import csv
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml

from .. import __version__
from ..amputation import ampute
from ..cohortgen import OutcomeModelSpec, generate_plasmode, generate_synthetic_base, prepare_plasmode
from ..tabular import load_cohort
from .config import ScenarioConfig, derive_seed
from .metrics import MetricsError, compute_metrics
from .models import AnalysisSettings, ModelResult, run_model

logger = logging.getLogger(__name__)

REPLICATE_COLUMNS = (
    "replicate", "model", "log_hr", "se", "ci_low", "ci_high", "degenerate", "reason",
    "n_pairs", "n_imp_predictors", "n_lasso_z2", "n_lasso_mz2", "n_ps_covariates",
    "n_events", "missing_prop",
)
DIAGNOSTIC_COLUMNS = ("replicate", "model", "imputation", "log_hr", "variance", "n_pairs", "degenerate", "reason")
SUMMARY_COLUMNS = (
    "model", "n_sim", "n_degenerate",
    "bias", "bias_mcse", "bias_lower", "bias_upper",
    "rmse", "rmse_mcse", "rmse_lower", "rmse_upper",
    "variance", "variance_mcse", "variance_lower", "variance_upper",
    "coverage", "coverage_mcse", "coverage_lower", "coverage_upper",
)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


@dataclass
class ScenarioResult:
    summaries: dict  # model -> MetricsSummary (None when not computable)
    rows: list       # per-replicate dicts, REPLICATE_COLUMNS
    out_dir: str
    n_failed_replicates: int = 0

    def table(self):
        import pandas as pd

        return pd.DataFrame(self.rows, columns=REPLICATE_COLUMNS)

    def estimates(self, model, usable_only=True):
        rows = [r for r in self.rows if r["model"] == model and not (usable_only and r["degenerate"])]
        return np.array([r["log_hr"] for r in rows])


# ------------------------------------------------------------ work units

_STATE = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _settings(cfg):
    return AnalysisSettings(cfg.m, cfg.k, cfg.n_folds, cfg.caliper, cfg.caliper_mode, cfg.prevalence_threshold)


def run_replicate(r, cfg=None, base=None, plasmode=None):
    """All configured models on replicate ``r``; returns (rows, diagnostic rows)."""
    cfg = cfg or _STATE["cfg"]
    base = base or _STATE["base"]
    plasmode = plasmode or _STATE["plasmode"]
    settings = _settings(cfg)
    try:
        rep = generate_plasmode(base, plasmode.outcome, plasmode.censor, cfg.hr_true,
                                seed=derive_seed(cfg.seed, r, "plasmode"), resample=cfg.resample,
                                spec=plasmode.spec, max_followup=plasmode.max_followup)
        amp = ampute(rep, cfg.amputation_spec(), seed=derive_seed(cfg.seed, r, "amputation"))
    except Exception as exc:  # replicate-level failure: record, keep going
        logger.warning("replicate %d failed during generation: %s", r, exc)
        res = [ModelResult.failed(m, f"replicate generation failed: {exc}") for m in cfg.models]
        return [_row(r, x, float("nan"), float("nan")) for x in res], [], True
    rows, diags = [], []
    for model in cfg.models:
        try:
            res = run_model(amp, model, derive_seed(cfg.seed, r, model), settings)
        except Exception as exc:
            logger.warning("replicate %d model %s crashed: %s", r, model, exc)
            res = ModelResult.failed(model, f"{type(exc).__name__}: {exc}")
        rows.append(_row(r, res, float(amp.event.sum()), float(amp.mz2.mean())))
        for imp in res.per_imputation:
            diags.append(dict(zip(DIAGNOSTIC_COLUMNS, (r, model) + tuple(imp))))
    return rows, diags, False


def _row(r, res, n_events, missing_prop):
    return {
        "replicate": r, "model": res.model, "log_hr": res.log_hr, "se": res.se,
        "ci_low": res.ci_low, "ci_high": res.ci_high, "degenerate": res.degenerate,
        "reason": res.reason.replace("\n", " "), "n_pairs": res.n_pairs,
        "n_imp_predictors": res.n_imp_predictors, "n_lasso_z2": res.n_lasso_z2,
        "n_lasso_mz2": res.n_lasso_mz2, "n_ps_covariates": res.n_ps_covariates,
        "n_events": n_events, "missing_prop": missing_prop,
    }


def build_base(cfg):
    if cfg.base_file:
        return load_cohort(cfg.base_file)
    return generate_synthetic_base(cfg.synth_config())


def summarize(rows, models, theta_true):
    out = {}
    for model in models:
        mine = [r for r in rows if r["model"] == model]
        ok = [r for r in mine if not r["degenerate"]]
        try:
            out[model] = compute_metrics(
                [r["log_hr"] for r in ok], [(r["ci_low"], r["ci_high"]) for r in ok],
                theta_true, model=model, n_degenerate=len(mine) - len(ok),
            )
        except MetricsError as exc:
            logger.warning("no metrics for %s: %s", model, exc)
            out[model] = None
    return out


def _versions():
    import numba
    import pandas
    import scipy

    return {
        "hdmi": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "numba": numba.__version__, "pandas": pandas.__version__,
    }


def run_scenario(cfg, out_dir=None, write=True):
    """Run every replicate and model, then score each model.

    Output files (in ``out_dir``): ``replicates.csv``, ``diagnostics.csv``,
    ``summary.csv`` and ``manifest.yaml``.  Results do not depend on
    ``cfg.jobs``.
    """
    if not isinstance(cfg, ScenarioConfig):
        cfg = ScenarioConfig.from_dict(cfg)
    out_dir = out_dir or cfg.resolved_out_dir()
    base = build_base(cfg)
    plasmode = prepare_plasmode(base, OutcomeModelSpec(hr_true=cfg.hr_true), calibrate=cfg.calibrate)
    reps = range(cfg.n_replicates)
    if cfg.jobs == 1:
        results = [run_replicate(r, cfg, base, plasmode) for r in reps]
    else:
        state = {"cfg": cfg, "base": base, "plasmode": plasmode}
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=(state,)) as ex:
            results = list(ex.map(run_replicate, reps))
    rows = [row for res in results for row in res[0]]
    diags = [d for res in results for d in res[1]]
    n_failed = sum(1 for res in results if res[2])
    summaries = summarize(rows, cfg.models, float(np.log(cfg.hr_true)))
    result = ScenarioResult(summaries, rows, out_dir, n_failed)
    if write:
        write_outputs(cfg, result, diags)
    return result


def write_outputs(cfg, result, diags=()):
    out = result.out_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out!r}: {exc}") from exc
    _write_csv(os.path.join(out, "replicates.csv"), REPLICATE_COLUMNS, result.rows)
    _write_csv(os.path.join(out, "diagnostics.csv"), DIAGNOSTIC_COLUMNS, diags)
    summary_rows = []
    for model in cfg.models:
        s = result.summaries.get(model)
        if s is None:
            n_deg = sum(1 for r in result.rows if r["model"] == model and r["degenerate"])
            summary_rows.append({"model": model, "n_sim": 0, "n_degenerate": n_deg,
                                 **{c: float("nan") for c in SUMMARY_COLUMNS[3:]}})
        else:
            summary_rows.append(s.as_row())
    _write_csv(os.path.join(out, "summary.csv"), SUMMARY_COLUMNS, summary_rows)
    cfg_dict = cfg.to_dict()
    cfg_dict.pop("jobs")
    cfg_dict.pop("out_dir")
    manifest = {
        "scenario": cfg.name,
        "config": cfg_dict,
        "config_hash": cfg.config_hash(),
        "master_seed": int(cfg.seed),
        "replicate_seeds": [
            {"replicate": r, "plasmode": derive_seed(cfg.seed, r, "plasmode"),
             "amputation": derive_seed(cfg.seed, r, "amputation")}
            for r in range(cfg.n_replicates)
        ],
        "n_failed_replicates": int(result.n_failed_replicates),
        "versions": _versions(),
    }
    with open(os.path.join(out, "manifest.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
