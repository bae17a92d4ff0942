"""Monte Carlo harness: scenarios, comparator models, metrics and reports."""

from .config import ScenarioConfig, derive_seed
from .metrics import MetricsSummary, bootstrap_less, compute_metrics
from .models import AnalysisSettings, ModelResult, run_model
from .report import report
from .scenario import ScenarioResult, run_replicate, run_scenario

__all__ = [
    "ScenarioConfig", "derive_seed", "MetricsSummary", "bootstrap_less", "compute_metrics",
    "AnalysisSettings", "ModelResult", "run_model", "report", "ScenarioResult",
    "run_replicate", "run_scenario",
]
