"""Logit link, Bernoulli likelihood and its derivatives in ``(beta0, beta, b)``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import Dataset, ModelParams

MU_CLAMP = 1e-12


def sigmoid(eta):
    """Numerically stable logistic function, clamped to ``[1e-12, 1 - 1e-12]``."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    out = np.clip(out, MU_CLAMP, 1.0 - MU_CLAMP)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LinkEval:
    eta: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    w: np.ndarray


def link_from_eta(eta: np.ndarray) -> LinkEval:
    mu = sigmoid(eta)
    d = mu * (1.0 - mu)
    # logit link: W = D Sigma^-1 D with Sigma = D, so W = D
    return LinkEval(eta=eta, mu=mu, d=d, w=d)


def linear_predictor(dataset: Dataset, params: ModelParams) -> np.ndarray:
    _check_dims(dataset, params)
    return params.beta0 + dataset.features @ params.beta + params.b[dataset.group]


def link_eval(dataset: Dataset, params: ModelParams) -> LinkEval:
    return link_from_eta(linear_predictor(dataset, params))


def _check_dims(dataset: Dataset, params: ModelParams) -> None:
    if params.beta.shape != (dataset.n_features,) or params.b.shape != (dataset.n_strata,):
        raise ValueError(
            f"parameter dimensions (p={params.beta.shape}, n={params.b.shape}) do not match "
            f"dataset (p={dataset.n_features}, n={dataset.n_strata})"
        )


def bernoulli_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    """``sum y log mu + (1 - y) log(1 - mu)``, summed with ``math.fsum``."""
    mu = np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)
    terms = y * np.log(mu) + (1.0 - y) * np.log1p(-mu)
    return math.fsum(terms.tolist())


def neg_loglik(dataset: Dataset, params: ModelParams, lam: float = 0.0) -> float:
    mu = link_eval(dataset, params).mu
    return -bernoulli_loglik(dataset.labels, mu) + lam * float(params.b @ params.b)


def full_gradient(dataset: Dataset, params: ModelParams, lam: float = 0.0) -> np.ndarray:
    """Gradient of :func:`neg_loglik` with respect to ``delta``."""
    resid = link_eval(dataset, params).mu - dataset.labels
    grad_b = np.bincount(dataset.group, weights=resid, minlength=dataset.n_strata)
    return np.concatenate(
        [[resid.sum()], dataset.features.T @ resid, grad_b + 2.0 * lam * params.b]
    )


def full_hessian(dataset: Dataset, params: ModelParams, lam: float = 0.0) -> np.ndarray:
    """``A^T W A + diag(0, 0_p, 2 lam I_n)`` with ``A = [1, X, Z]``."""
    w = link_eval(dataset, params).w
    a = dataset.full_design()
    h = a.T @ (a * w[:, None])
    p = dataset.n_features
    h[1 + p :, 1 + p :] += 2.0 * lam * np.eye(dataset.n_strata)
    return (h + h.T) / 2.0
