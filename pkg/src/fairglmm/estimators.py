"""Uniform entry point over the six estimators."""

from __future__ import annotations

from dataclasses import dataclass

from .data_model import Dataset, FitConfig, ModelParams
from .glmm_boost import FitTrace, fit_fair_glmm, fit_glmm
from .lr_solvers import SolveReport, fit_crlr, fit_fair_crlr, fit_fair_lr, fit_lr

ESTIMATORS = ("glmm", "fair-glmm", "crlr", "fair-crlr", "lr", "fair-lr")

DISPLAY_NAMES = {
    "glmm": "GLMM",
    "fair-glmm": "Fair GLMM",
    "crlr": "CRLR",
    "fair-crlr": "Fair CRLR",
    "lr": "LR",
    "fair-lr": "Fair LR",
}


@dataclass
class FitResult:
    estimator: str
    params: ModelParams
    converged: bool
    report: SolveReport | None = None
    trace: FitTrace | None = None


def fit_estimator(name: str, dataset: Dataset, config: FitConfig) -> FitResult:
    if name not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
    if name in ("glmm", "fair-glmm"):
        fitter = fit_glmm if name == "glmm" else fit_fair_glmm
        params, trace = fitter(dataset, config)
        return FitResult(name, params, trace.converged, trace=trace)
    solver = {"crlr": fit_crlr, "fair-crlr": fit_fair_crlr, "lr": fit_lr, "fair-lr": fit_fair_lr}
    report = solver[name](dataset, config)
    return FitResult(name, report.params, report.converged, report=report)
