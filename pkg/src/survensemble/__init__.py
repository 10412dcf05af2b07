"""Tree ensembles and Cox regression for right-censored survival data.

Random survival forests, survival BART and the Cox model share one data
layer, one set of evaluation metrics and a simulation harness.
"""

from .bart import BartConfig, BartPosterior, BartPriors, fit_bart_survival, survival_curve
from .cox import CoxModel, backward_stepwise_aic, fit_cox
from .curves import CumHazardCurve, CurveBatch, SurvivalCurve, TimeGrid, kaplan_meier, nelson_aalen
from .data import ConvergenceError, Covariate, SurvDataset, SurvivalDataError, read_csv, write_csv
from .metrics import brier_score, concordance_index, iauc, integrated_brier, roc_at_time
from .rsf import Forest, RsfConfig, fit_forest, variable_importance

__version__ = "0.1.0"

__all__ = [
    "BartConfig", "BartPosterior", "BartPriors", "fit_bart_survival", "survival_curve",
    "CoxModel", "backward_stepwise_aic", "fit_cox",
    "CumHazardCurve", "CurveBatch", "SurvivalCurve", "TimeGrid", "kaplan_meier", "nelson_aalen",
    "ConvergenceError", "Covariate", "SurvDataset", "SurvivalDataError", "read_csv", "write_csv",
    "brier_score", "concordance_index", "iauc", "integrated_brier", "roc_at_time",
    "Forest", "RsfConfig", "fit_forest", "variable_importance",
]
