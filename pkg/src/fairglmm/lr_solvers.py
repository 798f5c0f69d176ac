"""Newton solvers for LR, Fair LR, CRLR and Fair CRLR.

All four estimators minimise

    -loglik(delta) + lam * ||b||^2 + sum_k (rho_k / N) * max(0, |a_k @ delta| - N c)^2

over ``delta = (beta0, beta)`` (LR variants, ``b`` frozen at 0) or
``delta = (beta0, beta, b)`` (CRLR variants).  The covariance constraints
``|a @ delta| / N <= c`` are enforced by penalty continuation: ``rho`` is
quadrupled until the constraint holds to ``constraint_tol`` or the configured
number of continuation steps is exhausted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_model import Dataset, FitConfig, ModelParams
from .fairness import FairnessContext, constraint_vector, penalty_terms
from .logit_math import bernoulli_loglik, sigmoid

logger = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACK = 60
SEPARATION_ETA = 15.0


class NumericalError(RuntimeError):
    """A fit could not produce finite parameters."""


@dataclass
class SolveReport:
    params: ModelParams
    iterations: int
    final_grad_norm: float
    constraint_value: float
    converged: bool
    separable: bool = False
    rho_final: float = 0.0
    objective_trace: list[float] = field(default_factory=list)


class PenalizedLogistic:
    """Objective, gradient and Hessian of a penalised logistic loss.

    ``ridge`` holds the per-coordinate weights of the quadratic penalty
    ``sum ridge_j * delta_j^2``.
    """

    def __init__(
        self,
        design: np.ndarray,
        y: np.ndarray,
        ridge: np.ndarray,
        constraints: Sequence[np.ndarray] = (),
        rho: float = 0.0,
        threshold: float = 0.0,
    ):
        self.design = design
        self.y = y
        self.ridge = ridge
        self.n = design.shape[0]
        self.rho = rho
        self.threshold = threshold
        # contexts restricted to the coordinates being fitted
        self.contexts = [
            FairnessContext(0.0, np.asarray(a, dtype=float), self.n, design.shape[1] - 1)
            for a in constraints
        ]

    def value(self, x: np.ndarray) -> float:
        mu = sigmoid(self.design @ x)
        v = -bernoulli_loglik(self.y, mu) + float(self.ridge @ (x * x))
        for ctx in self.contexts:
            v += penalty_terms(ctx, x, self.rho, self.threshold)[0]
        return v

    def derivatives(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        eta = self.design @ x
        mu = sigmoid(eta)
        w = mu * (1.0 - mu)
        value = -bernoulli_loglik(self.y, mu) + float(self.ridge @ (x * x))
        grad = self.design.T @ (mu - self.y) + 2.0 * self.ridge * x
        hess = self.design.T @ (self.design * w[:, None])
        hess[np.diag_indices_from(hess)] += 2.0 * self.ridge
        for ctx in self.contexts:
            pv, pg, pf = penalty_terms(ctx, x, self.rho, self.threshold)
            value += pv
            grad = grad + pg
            hess += np.outer(pf, pf)
        return value, grad, (hess + hess.T) / 2.0

    def max_violation(self, x: np.ndarray) -> float:
        if not self.contexts:
            return 0.0
        return max(abs(float(ctx.a_full @ x)) / self.n - self.threshold for ctx in self.contexts)


def solve_newton_system(hess: np.ndarray, rhs: np.ndarray, ridge_eps: float) -> np.ndarray:
    """Solve ``hess @ x = rhs``, retrying once with ``ridge_eps * I`` added."""
    try:
        x = np.linalg.solve(hess, rhs)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    shifted = hess + max(ridge_eps, 1e-12) * np.eye(hess.shape[0])
    x = np.linalg.solve(shifted, rhs)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("system remains singular after ridge shift")
    return x


def newton_minimize(objective: PenalizedLogistic, x0: np.ndarray, config: FitConfig):
    """Damped Newton iterations with Armijo backtracking.

    Returns ``(x, iterations, grad_inf_norm, converged, objective_trace)``.
    """
    x = np.array(x0, dtype=float)
    value, grad, hess = objective.derivatives(x)
    trace = [value]
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    while gnorm >= config.newton_tol and it < config.newton_max_iter:
        it += 1
        try:
            step = -solve_newton_system(hess, grad, config.ridge_eps)
        except np.linalg.LinAlgError:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        for _ in range(MAX_BACKTRACK):
            trial = x + t * step
            trial_value = objective.value(trial)
            if trial_value <= value + ARMIJO_SLOPE * t * slope:
                break
            t *= ARMIJO_SHRINK
        else:
            # no decrease representable in floating point
            break
        x = trial
        value, grad, hess = objective.derivatives(x)
        trace.append(value)
        gnorm = float(np.max(np.abs(grad)))
    if not np.all(np.isfinite(x)):
        raise NumericalError("Newton iterates became non-finite")
    return x, it, gnorm, gnorm < config.newton_tol, trace


def _solve_with_continuation(
    design: np.ndarray,
    y: np.ndarray,
    ridge: np.ndarray,
    constraints: Sequence[np.ndarray],
    config: FitConfig,
    threshold: float,
):
    x = np.zeros(design.shape[1])
    rho = config.rho
    active = [a for a in constraints if np.any(a != 0.0)]
    steps = config.continuation_steps if (active and rho > 0.0) else 0
    total_it = 0
    trace: list[float] = []
    for k in range(steps + 1):
        objective = PenalizedLogistic(design, y, ridge, active if rho > 0 else (), rho, threshold)
        x, it, gnorm, converged, part = newton_minimize(objective, x, config)
        total_it += it
        trace.extend(part)
        violation = objective.max_violation(x)
        if violation <= config.constraint_tol or k == steps:
            break
        logger.debug("continuation step %d: violation %.3g at rho %.3g", k, violation, rho)
        rho *= 4.0
    return x, total_it, gnorm, converged, rho, trace


def _fairness_rows(dataset: Dataset, contexts, full: bool) -> list[np.ndarray]:
    if contexts is None:
        contexts = [constraint_vector(dataset)]
    return [ctx.a_full if full else ctx.fixed_part() for ctx in contexts]


def _report(dataset, x, full, it, gnorm, converged, rho, trace, contexts) -> SolveReport:
    p = dataset.n_features
    if full:
        params = ModelParams.from_delta(x, p)
    else:
        params = ModelParams(float(x[0]), x[1:].copy(), np.zeros(dataset.n_strata))
    if contexts is None:
        contexts = [constraint_vector(dataset)]
    delta = params.delta()
    cvals = [float(ctx.a_full @ delta) / ctx.n_total for ctx in contexts]
    design = dataset.full_design() if full else dataset.fixed_design()
    separable = bool(np.max(np.abs(design @ x)) > SEPARATION_ETA)
    return SolveReport(
        params=params,
        iterations=it,
        final_grad_norm=gnorm,
        constraint_value=max(cvals, key=abs) if cvals else 0.0,
        converged=converged,
        separable=separable,
        rho_final=rho,
        objective_trace=trace,
    )


def fit_lr(dataset: Dataset, config: FitConfig) -> SolveReport:
    """Unpenalised logistic regression on ``[1, X]``; ``b`` stays zero."""
    design = dataset.fixed_design()
    ridge = np.zeros(design.shape[1])
    x, it, gnorm, conv, trace = newton_minimize(
        PenalizedLogistic(design, dataset.labels, ridge), np.zeros(design.shape[1]), config
    )
    return _report(dataset, x, False, it, gnorm, conv, 0.0, trace, None)


def fit_fair_lr(
    dataset: Dataset, config: FitConfig, contexts: Sequence[FairnessContext] | None = None
) -> SolveReport:
    design = dataset.fixed_design()
    ridge = np.zeros(design.shape[1])
    rows = _fairness_rows(dataset, contexts, full=False)
    c = config.c
    if math.isinf(c):
        rows = []
        c = 0.0
    x, it, gnorm, conv, rho, trace = _solve_with_continuation(
        design, dataset.labels, ridge, rows, config, c
    )
    return _report(dataset, x, False, it, gnorm, conv, rho, trace, contexts)


def _crlr_ridge(dataset: Dataset, lam: float) -> np.ndarray:
    return np.concatenate([np.zeros(1 + dataset.n_features), np.full(dataset.n_strata, lam)])


def fit_crlr(dataset: Dataset, config: FitConfig) -> SolveReport:
    """Logistic regression with random intercepts shrunk by ``lam * ||b||^2``."""
    design = dataset.full_design()
    x, it, gnorm, conv, trace = newton_minimize(
        PenalizedLogistic(design, dataset.labels, _crlr_ridge(dataset, config.lam)),
        np.zeros(design.shape[1]),
        config,
    )
    return _report(dataset, x, True, it, gnorm, conv, 0.0, trace, None)


def fit_fair_crlr(
    dataset: Dataset, config: FitConfig, contexts: Sequence[FairnessContext] | None = None
) -> SolveReport:
    design = dataset.full_design()
    rows = _fairness_rows(dataset, contexts, full=True)
    c = config.c
    if math.isinf(c):
        rows = []
        c = 0.0
    x, it, gnorm, conv, rho, trace = _solve_with_continuation(
        design, dataset.labels, _crlr_ridge(dataset, config.lam), rows, config, c
    )
    return _report(dataset, x, True, it, gnorm, conv, rho, trace, contexts)
