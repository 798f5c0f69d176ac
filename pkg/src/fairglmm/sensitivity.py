"""Shadow prices of covariance fairness constraints from the KKT system.

At a stationary point of the constrained problem

    min f(delta)  s.t.  a_k @ delta / N = 0,  k = 1..K

the multipliers satisfy ``grad f + sum_k zeta_k a_k / N = 0``.  The system has
more equations than unknowns, so ``zeta`` is taken as the least-squares
solution and the residual norm is reported alongside it.  With this sign
convention a constraint that binds against a positive covariance gets a
positive ``zeta``, and ``zeta`` is the decrease of the optimal objective per
unit relaxation of the threshold ``c``.  For a fit under the quadratic
penalty ``(rho / N) (a @ delta)^2`` this gives ``zeta = 2 rho (a @ delta)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .data_model import Dataset, FitConfig, ModelParams
from .fairness import constraint_vector
from .glmm_boost import fit_glmm
from .logit_math import full_gradient
from .lr_solvers import fit_fair_crlr, fit_fair_lr, fit_lr
from .metrics import MetricError, accuracy, confusion, disparate_impact, predict_dataset

logger = logging.getLogger(__name__)


@dataclass
class ShadowPriceReport:
    features: tuple[str, ...]
    zeta: np.ndarray
    residual_norm: float
    grad_norm: float
    rank_deficient: bool = False
    di_improvement: np.ndarray | None = None
    ac_drop: float = float("nan")


def _resolve(dataset: Dataset, sensitive_set) -> dict[str, np.ndarray]:
    if isinstance(sensitive_set, Mapping):
        return {k: np.asarray(v, dtype=float) for k, v in sensitive_set.items()}
    out = {}
    for name in sensitive_set:
        if name not in dataset.sensitive_columns:
            raise KeyError(f"unknown sensitive feature {name!r}")
        out[name] = dataset.sensitive_columns[name]
    return out


def _least_squares(grad: np.ndarray, columns: np.ndarray, names) -> ShadowPriceReport:
    rank = np.linalg.matrix_rank(columns) if columns.size else 0
    rank_deficient = rank < columns.shape[1]
    if rank_deficient:
        logger.warning("constraint columns are rank deficient; using the minimum-norm solution")
    zeta, *_ = np.linalg.lstsq(columns, -grad, rcond=None)
    residual = float(np.linalg.norm(grad + columns @ zeta))
    return ShadowPriceReport(
        features=tuple(names),
        zeta=zeta,
        residual_norm=residual,
        grad_norm=float(np.linalg.norm(grad)),
        rank_deficient=bool(rank_deficient),
    )


def kkt_multipliers_lr(dataset: Dataset, params: ModelParams, sensitive_set) -> ShadowPriceReport:
    """Multipliers for logistic regression; only the ``(beta0, beta)`` rows."""
    cols = _resolve(dataset, sensitive_set)
    p = dataset.n_features
    fixed = ModelParams(params.beta0, params.beta, np.zeros(dataset.n_strata))
    grad = full_gradient(dataset, fixed, 0.0)[: 1 + p]
    a = np.column_stack(
        [constraint_vector(dataset, s).fixed_part() / dataset.n_rows for s in cols.values()]
    ) if cols else np.zeros((1 + p, 0))
    return _least_squares(grad, a, cols.keys())


def kkt_multipliers_crlr(
    dataset: Dataset, params: ModelParams, lam: float, sensitive_set
) -> ShadowPriceReport:
    """Multipliers for cluster-regularised LR, including the ``b_i`` rows."""
    cols = _resolve(dataset, sensitive_set)
    grad = full_gradient(dataset, params, lam)
    a = np.column_stack(
        [constraint_vector(dataset, s).a_full / dataset.n_rows for s in cols.values()]
    ) if cols else np.zeros((grad.shape[0], 0))
    return _least_squares(grad, a, cols.keys())


def _di_or_none(pred, s):
    try:
        return disparate_impact(pred, s)
    except MetricError:
        return None


def shadow_price_study(
    dataset: Dataset,
    sensitive_sets: Sequence[Sequence[str]],
    config: FitConfig,
    test: Dataset | None = None,
    model: str = "lr",
) -> list[ShadowPriceReport]:
    """Fit a fair model with ``c = 0`` per sensitive set and report multipliers.

    DI improvement (percent, per feature) is measured against plain LR and the
    accuracy drop (percent) against the plain GLMM, both on ``test`` when
    given, otherwise on the training data.
    """
    if model not in ("lr", "crlr"):
        raise ValueError("model must be 'lr' or 'crlr'")
    evaluation = test if test is not None else dataset
    ids = dataset.stratum_ids
    pred_lr = predict_dataset(fit_lr(dataset, config).params, evaluation, ids)
    glmm_params, _ = fit_glmm(dataset, config)
    ac_glmm = accuracy(confusion(predict_dataset(glmm_params, evaluation, ids), evaluation.labels))
    fair_config = replace(config, c=0.0, continuation_steps=0)

    reports = []
    for names in sensitive_sets:
        cols = _resolve(dataset, names)
        contexts = [constraint_vector(dataset, s) for s in cols.values()]
        if model == "lr":
            fit = fit_fair_lr(dataset, fair_config, contexts)
            rep = kkt_multipliers_lr(dataset, fit.params, cols)
        else:
            fit = fit_fair_crlr(dataset, fair_config, contexts)
            rep = kkt_multipliers_crlr(dataset, fit.params, config.lam, cols)
        pred = predict_dataset(fit.params, evaluation, ids)
        improvements = []
        for name in cols:
            s_eval = cols[name] if evaluation is dataset else evaluation.sensitive_columns[name]
            di_fair, di_plain = _di_or_none(pred, s_eval), _di_or_none(pred_lr, s_eval)
            if di_fair is None or di_plain is None:
                improvements.append(0.0)  # constant sensitive feature: nothing to improve
            elif di_plain == 0.0:
                improvements.append(float("inf") if di_fair > 0 else 0.0)
            else:
                improvements.append(100.0 * (di_fair - di_plain) / di_plain)
        rep.di_improvement = np.asarray(improvements)
        ac_fair = accuracy(confusion(pred, evaluation.labels))
        rep.ac_drop = 100.0 * (ac_glmm - ac_fair) / ac_glmm
        reports.append(rep)
    return reports


SENSITIVITY_HEADER = ["features", "zeta", "di_improvement_pct", "ac_drop_pct", "residual_norm"]


def write_sensitivity_csv(reports: Sequence[ShadowPriceReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SENSITIVITY_HEADER)
        for rep in reports:
            di = rep.di_improvement if rep.di_improvement is not None else []
            w.writerow(
                [
                    "/".join(rep.features),
                    "/".join(f"{z:.6g}" for z in rep.zeta),
                    "/".join(f"{v:.4g}" for v in di),
                    f"{rep.ac_drop:.4g}",
                    f"{rep.residual_norm:.3g}",
                ]
            )
