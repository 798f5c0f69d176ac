"""Fair logistic regression and fair GLMMs with random intercepts for stratified data."""

from __future__ import annotations

from .data_model import DataError, Dataset, FitConfig, ModelParams, build_dataset
from .estimators import ESTIMATORS, FitResult, fit_estimator
from .glmm_boost import fit_fair_glmm, fit_glmm
from .ingest import load_csv, load_schema, prepare_bank
from .lr_solvers import fit_crlr, fit_fair_crlr, fit_fair_lr, fit_lr
from .metrics import accuracy, confusion, disparate_impact, evaluate
from .sensitivity import kkt_multipliers_crlr, kkt_multipliers_lr, shadow_price_study
from .simgen import (
    SCENARIOS,
    ScenarioSpec,
    generate_population,
    run_replications,
    split_train_test,
)

__all__ = [
    "DataError",
    "Dataset",
    "ESTIMATORS",
    "FitConfig",
    "FitResult",
    "ModelParams",
    "SCENARIOS",
    "ScenarioSpec",
    "accuracy",
    "build_dataset",
    "confusion",
    "disparate_impact",
    "evaluate",
    "fit_crlr",
    "fit_estimator",
    "fit_fair_crlr",
    "fit_fair_glmm",
    "fit_fair_lr",
    "fit_glmm",
    "fit_lr",
    "generate_population",
    "kkt_multipliers_crlr",
    "kkt_multipliers_lr",
    "load_csv",
    "load_schema",
    "prepare_bank",
    "run_replications",
    "shadow_price_study",
    "split_train_test",
]

__version__ = "0.1.0"
