"""Sup-score test for publication bias under the Copas selection model."""

__version__ = "0.1.0"

from .comparators import ComparatorResult, copas_naive_test, egger_test, trim_and_fill
from .estimation import NullFit, SensitivityFit, fit_null, fit_sensitivity
from .model import (CopasParams, Dataset, EfficientScoreParts, Study, copas_loglik,
                    efficient_information, score_rho_at_null, selection_prob)
from .scoretest import (GridSpec, ScoreTestResult, bootstrap_pvalue, default_grid,
                        fixed_grid, t_statistic, z_at)
from .sim import PowerReport, SimConfig, generate, run_power_study

__all__ = [
    "ComparatorResult", "CopasParams", "Dataset", "EfficientScoreParts", "GridSpec",
    "NullFit", "PowerReport", "ScoreTestResult", "SensitivityFit", "SimConfig", "Study",
    "bootstrap_pvalue", "copas_loglik", "copas_naive_test", "default_grid",
    "efficient_information", "egger_test", "fit_null", "fit_sensitivity", "generate",
    "fixed_grid", "run_power_study", "score_rho_at_null", "selection_prob", "t_statistic",
    "trim_and_fill", "z_at",
]
