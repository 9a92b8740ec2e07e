"""Doubly robust pseudo-outcomes for detecting and exploring treatment effect heterogeneity."""

from .analysis import analyze, run_dr_pipeline
from .baselines import multivariate_baseline, univariate_baseline
from .config import Config
from .data import Covariates, SchemaConfig, TrialDataset, encode, load_dataset
from .hettest import HetTestResult, global_test
from .metalearners import (
    CateEstimate, NuisanceFit, PseudoOutcomeVector, ate_aipw, ate_gcomp, ate_ipw, cate_s_learner,
    cate_t_learner, crossfit, dr_learner_crossfit, pseudo_outcome_dr, pseudo_outcome_ipw,
)
from .ranking import ImportanceRanking, cate_oob, rank_effect_modifiers
from .simbench import ScenarioSpec, calibrate, run_benchmark, simulate_trial

__version__ = "0.1.0"

__all__ = [
    "Config", "Covariates", "SchemaConfig", "TrialDataset", "encode", "load_dataset",
    "NuisanceFit", "PseudoOutcomeVector", "CateEstimate", "crossfit", "dr_learner_crossfit",
    "pseudo_outcome_dr", "pseudo_outcome_ipw", "ate_aipw", "ate_gcomp", "ate_ipw",
    "cate_s_learner", "cate_t_learner", "HetTestResult", "global_test", "ImportanceRanking",
    "rank_effect_modifiers", "cate_oob", "univariate_baseline", "multivariate_baseline",
    "ScenarioSpec", "simulate_trial", "calibrate", "run_benchmark", "analyze", "run_dr_pipeline",
]
