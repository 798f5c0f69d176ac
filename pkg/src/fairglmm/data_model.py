"""Core domain types: datasets grouped by stratum, parameters and fit settings.

Rows of a :class:`Dataset` are always stored grouped by stratum in ascending
order, so the random-effect indicator block ``Z`` is block diagonal.  Stratum
labels supplied by the caller are relabeled to the dense range ``1..n``; the
original labels are kept in ``stratum_ids`` so that parameters fitted on one
dataset can be applied to another that shares the same labels.

Dimension conventions used throughout the package:

* ``X`` is ``N x p`` (no intercept column).
* the full design ``A = [1, X, Z]`` is ``N x (1 + p + n)``.
* the component design ``A_r = [1, x_r, Z]`` is ``N x (n + 2)``.
* the random-intercept covariance ``Q_b = Q * I_n`` is ``n x n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class DataError(ValueError):
    """Input data violates a structural requirement."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    strata: np.ndarray
    sensitive: np.ndarray
    stratum_sizes: np.ndarray
    stratum_ids: np.ndarray
    permutation: np.ndarray
    feature_names: tuple[str, ...] = ()
    sensitive_columns: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_strata(self) -> int:
        return self.stratum_sizes.shape[0]

    @property
    def group(self) -> np.ndarray:
        """Zero-based stratum index per row."""
        return self.strata - 1

    def z_matrix(self) -> np.ndarray:
        z = np.zeros((self.n_rows, self.n_strata))
        z[np.arange(self.n_rows), self.group] = 1.0
        return z

    def full_design(self) -> np.ndarray:
        return np.hstack([np.ones((self.n_rows, 1)), self.features, self.z_matrix()])

    def fixed_design(self) -> np.ndarray:
        """``[1, X]``, the design used by plain logistic regression."""
        return np.hstack([np.ones((self.n_rows, 1)), self.features])

    def unpermute(self, values: np.ndarray) -> np.ndarray:
        """Map a per-row array back to the caller's original row order."""
        out = np.empty_like(values)
        out[self.permutation] = values
        return out

    def with_sensitive(self, name: str) -> Dataset:
        """Copy with ``sensitive`` replaced by a named sensitive column."""
        if name not in self.sensitive_columns:
            raise DataError(f"unknown sensitive column {name!r}")
        return Dataset(
            features=self.features,
            labels=self.labels,
            strata=self.strata,
            sensitive=self.sensitive_columns[name],
            stratum_sizes=self.stratum_sizes,
            stratum_ids=self.stratum_ids,
            permutation=self.permutation,
            feature_names=self.feature_names,
            sensitive_columns=self.sensitive_columns,
        )

    def subset(self, rows: np.ndarray) -> Dataset:
        """Dataset restricted to ``rows`` (indices into the stored order).

        Original stratum labels are preserved; strata are relabeled densely.
        """
        rows = np.asarray(rows)
        return build_dataset(
            self.features[rows],
            self.labels[rows],
            self.stratum_ids[self.group[rows]],
            self.sensitive[rows],
            feature_names=self.feature_names,
            sensitive_columns={k: v[rows] for k, v in self.sensitive_columns.items()},
        )


def _check_binary(name: str, values: np.ndarray) -> np.ndarray:
    if not np.all((values == 0) | (values == 1)):
        raise DataError(f"{name} must contain only 0/1 values")
    return values.astype(float)


def build_dataset(
    features,
    labels,
    strata,
    sensitive,
    *,
    feature_names=None,
    sensitive_columns: Mapping[str, np.ndarray] | None = None,
) -> Dataset:
    """Validate inputs, relabel strata densely and sort rows by stratum.

    The sort is stable, so rows keep their relative order within a stratum.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(labels)
    g = np.asarray(strata)
    s = np.asarray(sensitive)
    n_rows = y.shape[0]
    if n_rows == 0:
        raise DataError("empty dataset")
    if not (x.shape[0] == g.shape[0] == s.shape[0] == n_rows):
        raise DataError(
            f"length mismatch: features {x.shape[0]}, labels {n_rows}, "
            f"strata {g.shape[0]}, sensitive {s.shape[0]}"
        )
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    y = _check_binary("labels", y)
    s = _check_binary("sensitive", s)

    ids, dense = np.unique(g, return_inverse=True)
    order = np.argsort(dense, kind="stable")
    sizes = np.bincount(dense, minlength=ids.shape[0])
    extra = {
        name: _check_binary(f"sensitive column {name}", np.asarray(col))[order]
        for name, col in (sensitive_columns or {}).items()
    }
    if feature_names is None:
        feature_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    elif len(feature_names) != x.shape[1]:
        raise DataError("feature_names length does not match feature columns")
    return Dataset(
        features=x[order],
        labels=y[order],
        strata=dense[order] + 1,
        sensitive=s[order],
        stratum_sizes=sizes,
        stratum_ids=ids,
        permutation=order,
        feature_names=tuple(feature_names),
        sensitive_columns=extra,
    )


@dataclass(frozen=True)
class DesignView:
    a_full: np.ndarray
    a_r: np.ndarray
    r: int


def design_view(dataset: Dataset, r: int) -> DesignView:
    """Full design and the component design for covariate ``r`` (1-based)."""
    if not 1 <= r <= dataset.n_features:
        raise IndexError(f"component index {r} outside [1, {dataset.n_features}]")
    z = dataset.z_matrix()
    ones = np.ones((dataset.n_rows, 1))
    a_full = np.hstack([ones, dataset.features, z])
    a_r = np.hstack([ones, dataset.features[:, r - 1 : r], z])
    return DesignView(a_full=a_full, a_r=a_r, r=r)


@dataclass
class ModelParams:
    """Intercept, fixed effects, random intercepts and their variance ``q``.

    ``q`` is 0 for the estimators without random effects.
    """

    beta0: float
    beta: np.ndarray
    b: np.ndarray
    q: float = 0.0

    @classmethod
    def zeros(cls, p: int, n: int, q: float = 0.0) -> ModelParams:
        return cls(0.0, np.zeros(p), np.zeros(n), q)

    @classmethod
    def from_delta(cls, delta: np.ndarray, p: int, q: float = 0.0) -> ModelParams:
        delta = np.asarray(delta, dtype=float)
        return cls(float(delta[0]), delta[1 : 1 + p].copy(), delta[1 + p :].copy(), q)

    def delta(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta, self.b])

    def copy(self) -> ModelParams:
        return ModelParams(self.beta0, self.beta.copy(), self.b.copy(), self.q)


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters and numerical settings shared by all estimators.

    ``lam`` is the random-effect ridge weight, ``rho`` the fairness penalty
    weight and ``c`` the covariance threshold.  ``continuation_steps`` is the
    number of times the fairness penalty is quadrupled while the covariance
    constraint remains violated; 0 gives a single fixed-``rho`` solve.

    ``boost_rho_scale`` sets how ``rho`` enters the boosting steps:
    ``"hessian"`` uses ``rho`` as the coefficient of ``a_r a_r^T`` in the
    penalised Fisher matrix (penalty ``rho/2 (a @ delta)^2``), ``"objective"``
    uses it as the coefficient of ``(rho / N) (a @ delta)^2``.
    """

    lam: float = 1.0
    rho: float = 0.8
    c: float = 0.1
    l_max: int = 200
    q0: float = 2.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    q_tol: float = 1e-4
    ridge_eps: float = 1e-8
    include_sensitive_as_covariate: bool = True
    continuation_steps: int = 8
    constraint_tol: float = 1e-6
    dense_hat_limit: int = 5000
    hutchinson_probes: int = 20
    seed: int = 0
    boost_rho_scale: str = "hessian"

    def __post_init__(self):
        if self.boost_rho_scale not in ("objective", "hessian"):
            raise ValueError("boost_rho_scale must be 'objective' or 'hessian'")
        if self.lam < 0 or self.rho < 0 or self.c < 0:
            raise ValueError("lam, rho and c must be nonnegative")
        if self.l_max < 0:
            raise ValueError("l_max must be nonnegative")
        if self.q0 <= 0:
            raise ValueError("q0 must be positive")
        for name in ("newton_tol", "q_tol", "constraint_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.ridge_eps < 0:
            raise ValueError("ridge_eps must be nonnegative")
