"""Covariance fairness constraint and its quadratic penalty.

The constraint row vector ``a`` collects ``sum (s - s_bar) [1, x, z]`` over all
rows, so ``a @ delta / N`` is the empirical covariance between the sensitive
feature and the linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import Dataset


@dataclass(frozen=True)
class FairnessContext:
    s_bar: float
    a_full: np.ndarray
    n_total: int
    p: int

    def fixed_part(self) -> np.ndarray:
        """Entries for ``(beta0, beta)``, used when random effects are absent."""
        return self.a_full[: 1 + self.p]


def sensitive_mean(dataset: Dataset, sensitive: np.ndarray | None = None) -> float:
    s = dataset.sensitive if sensitive is None else sensitive
    return float(np.mean(s))


def constraint_vector(dataset: Dataset, sensitive: np.ndarray | None = None) -> FairnessContext:
    s = dataset.sensitive if sensitive is None else np.asarray(sensitive, dtype=float)
    s_bar = sensitive_mean(dataset, s)
    centered = s - s_bar
    a = np.concatenate(
        [
            [centered.sum()],
            dataset.features.T @ centered,
            np.bincount(dataset.group, weights=centered, minlength=dataset.n_strata),
        ]
    )
    return FairnessContext(s_bar=s_bar, a_full=a, n_total=dataset.n_rows, p=dataset.n_features)


def restrict_to_component(ctx: FairnessContext, r: int) -> np.ndarray:
    """Entries of ``a`` in ``A_r`` column order: intercept, covariate r, strata."""
    if not 1 <= r <= ctx.p:
        raise IndexError(f"component index {r} outside [1, {ctx.p}]")
    a = ctx.a_full
    return np.concatenate([[a[0], a[r]], a[1 + ctx.p :]])


def covariance_value(ctx: FairnessContext, delta: np.ndarray) -> float:
    delta = np.asarray(delta, dtype=float)
    if delta.shape[0] == ctx.p + 1:
        return float(ctx.fixed_part() @ delta) / ctx.n_total
    if delta.shape != ctx.a_full.shape:
        raise ValueError(f"delta has length {delta.shape[0]}, expected {ctx.a_full.shape[0]}")
    return float(ctx.a_full @ delta) / ctx.n_total


def penalty_terms(
    ctx: FairnessContext, delta: np.ndarray, rho: float, threshold: float = 0.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and rank-1 Hessian factor of the fairness penalty.

    The penalty is ``(rho / N) * max(0, |a @ delta| - N * threshold) ** 2``;
    with ``threshold = 0`` this is ``(rho / N) * (a @ delta) ** 2``.  The
    Hessian is ``outer(f, f)`` for the returned factor ``f`` (zero where the
    hinge is inactive).  ``delta`` may cover all of ``(beta0, beta, b)`` or
    only ``(beta0, beta)``.
    """
    delta = np.asarray(delta, dtype=float)
    a = ctx.a_full if delta.shape[0] == ctx.a_full.shape[0] else ctx.fixed_part()
    if delta.shape != a.shape:
        raise ValueError(f"delta has length {delta.shape[0]}, expected {a.shape[0]}")
    n = ctx.n_total
    u = float(a @ delta)
    if threshold == 0.0 and rho > 0.0:
        return rho / n * u**2, 2.0 * rho / n * u * a, np.sqrt(2.0 * rho / n) * a
    excess = abs(u) - n * threshold
    if rho == 0.0 or excess <= 0.0:
        zero = np.zeros_like(a)
        return 0.0, zero, zero
    value = rho / n * excess**2
    grad = 2.0 * rho / n * excess * np.sign(u) * a
    factor = np.sqrt(2.0 * rho / n) * a
    return value, grad, factor
