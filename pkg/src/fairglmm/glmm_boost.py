"""Component-wise likelihood boosting for (fair) logistic mixed models.

Each iteration proposes one penalised Newton step per covariate ``r`` on the
block ``(beta0, beta_r, b)``, scores every proposal by BIC and commits the
best one.  After each iteration the random-intercept variance ``Q`` is
re-estimated from the approximate posterior variances of ``b``.  With
``rho = 0`` the fairness terms vanish and the procedure is the plain GLMM fit.

Hat matrices are never formed column by column.  For the logit link
``W = Sigma = D``, so the component hat matrix reduces to
``M_r = D A_r FH_r^{-1} A_r^T``; the running product ``prod_k (I - M_k)`` is
kept densely for moderate N and through Hutchinson probes otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import Dataset, FitConfig, ModelParams
from .fairness import FairnessContext, constraint_vector, restrict_to_component
from .logit_math import bernoulli_loglik, link_from_eta, linear_predictor, sigmoid
from .lr_solvers import fit_fair_crlr

logger = logging.getLogger(__name__)

Q_FLOOR = 1e-6


class BoostingError(RuntimeError):
    """No candidate component produced a usable step."""


class ComponentDesign:
    """Structured products with ``A_r = [1, x_r, Z]`` for rows sorted by stratum."""

    def __init__(self, dataset: Dataset, r: int):
        self.x = dataset.features[:, r - 1]
        self.group = dataset.group
        self.starts = np.concatenate([[0], np.cumsum(dataset.stratum_sizes)[:-1]])
        self.n_strata = dataset.n_strata

    def rmatmul(self, v: np.ndarray) -> np.ndarray:
        """``A_r^T v`` for ``v`` of shape ``(N,)`` or ``(N, m)``."""
        return np.concatenate(
            [
                v.sum(axis=0, keepdims=True),
                (self.x @ v)[None] if v.ndim == 2 else np.atleast_1d(self.x @ v),
                np.add.reduceat(v, self.starts, axis=0),
            ]
        )

    def matmul(self, c: np.ndarray) -> np.ndarray:
        """``A_r c`` for ``c`` of shape ``(n+2,)`` or ``(n+2, m)``."""
        if c.ndim == 1:
            return c[0] + self.x * c[1] + c[2:][self.group]
        return c[0][None, :] + self.x[:, None] * c[1][None, :] + c[2:][self.group]

    def weighted_gram(self, w: np.ndarray) -> np.ndarray:
        """``A_r^T diag(w) A_r``."""
        n = self.n_strata
        g = np.zeros((n + 2, n + 2))
        wx = w * self.x
        gw = np.add.reduceat(w, self.starts)
        gwx = np.add.reduceat(wx, self.starts)
        g[0, 0] = w.sum()
        g[0, 1] = g[1, 0] = wx.sum()
        g[1, 1] = wx @ self.x
        g[0, 2:] = g[2:, 0] = gw
        g[1, 2:] = g[2:, 1] = gwx
        g[2:, 2:] = np.diag(gw)
        return g

    def diag_of_product(self, c: np.ndarray) -> np.ndarray:
        """Diagonal of ``A_r c`` for square-in-N ``c`` of shape ``(n+2, N)``."""
        idx = np.arange(c.shape[1])
        return c[0] + self.x * c[1] + c[2 + self.group, idx]


def penalty_matrix(n_strata: int, q: float) -> np.ndarray:
    """``K = blockdiag(0, 0, Q^-1 I_n)``."""
    return np.diag(np.concatenate([[0.0, 0.0], np.full(n_strata, 1.0 / q)]))


def _solve_or_ridge(mat: np.ndarray, rhs: np.ndarray, ridge_eps: float) -> np.ndarray:
    try:
        out = np.linalg.solve(mat, rhs)
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    return np.linalg.solve(mat + max(ridge_eps, 1e-12) * np.eye(mat.shape[0]), rhs)


class DenseHat:
    """Exact running product ``P = (I - M_{l-1}) ... (I - M_0)``."""

    def __init__(self, p0: np.ndarray):
        self.p = p0

    def trace_p(self) -> float:
        return float(np.trace(self.p))

    def trace_mp(self, design: ComponentDesign, d: np.ndarray, fh_inv: np.ndarray) -> float:
        e = fh_inv @ design.rmatmul(self.p)
        return float(d @ design.diag_of_product(e))

    def commit(self, design: ComponentDesign, d: np.ndarray, fh_inv: np.ndarray) -> None:
        e = fh_inv @ design.rmatmul(self.p)
        self.p = self.p - d[:, None] * design.matmul(e)


class ProbeHat:
    """Hutchinson estimate of the same traces using Rademacher probes."""

    def __init__(self, probes: np.ndarray, y0: np.ndarray):
        self.v = probes
        self.y = y0

    def trace_p(self) -> float:
        return float(np.sum(self.v * self.y)) / self.v.shape[1]

    def trace_mp(self, design: ComponentDesign, d: np.ndarray, fh_inv: np.ndarray) -> float:
        my = d[:, None] * design.matmul(fh_inv @ design.rmatmul(self.y))
        return float(np.sum(self.v * my)) / self.v.shape[1]

    def commit(self, design: ComponentDesign, d: np.ndarray, fh_inv: np.ndarray) -> None:
        self.y = self.y - d[:, None] * design.matmul(fh_inv @ design.rmatmul(self.y))


@dataclass
class BoostState:
    params: ModelParams
    eta: np.ndarray
    mu: np.ndarray
    hat: DenseHat | ProbeHat
    q_history: list[float] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    bic_trace: list[np.ndarray] = field(default_factory=list)
    hat_trace: list[float] = field(default_factory=list)

    @property
    def hat_product(self) -> np.ndarray | None:
        return self.hat.p if isinstance(self.hat, DenseHat) else None


@dataclass
class ComponentStep:
    r: int
    increment: np.ndarray
    fisher: np.ndarray
    bic: float = math.nan


@dataclass
class FitTrace:
    selected: list[int]
    bic: list[np.ndarray]
    q_history: list[float]
    hat_trace: list[float]
    iterations: int
    converged: bool
    message: str = ""
    metadata: dict = field(default_factory=dict)


def initial_hat(dataset: Dataset, params: ModelParams, eta: np.ndarray, config: FitConfig):
    """``I - M_0`` at ``eta``, with ``M_0 = W A_1 (A_1^T W A_1 + K)^{-1} A_1^T``.

    This is the ridge hat matrix ``A_1 (A_1^T W A_1 + K)^{-1} A_1^T W`` written
    in the same conjugation as the component matrices ``M_r``, so that the
    running product is taken in a single basis.
    """
    design = ComponentDesign(dataset, 1)
    w = link_from_eta(eta).w
    fisher = design.weighted_gram(w) + penalty_matrix(dataset.n_strata, params.q)
    n = dataset.n_rows
    if n <= config.dense_hat_limit:
        base = np.eye(n)
    else:
        rng = np.random.default_rng(config.seed)
        base = rng.choice([-1.0, 1.0], size=(n, config.hutchinson_probes))
    fw = _solve_or_ridge(fisher, design.rmatmul(base), config.ridge_eps)
    y0 = base - w[:, None] * design.matmul(fw)
    return DenseHat(y0) if n <= config.dense_hat_limit else ProbeHat(base, y0)


def warm_start(dataset: Dataset, config: FitConfig) -> BoostState:
    """Start from the Fair CRLR solution (plain CRLR when ``rho = 0``)."""
    report = fit_fair_crlr(dataset, config)
    params = report.params.copy()
    params.q = config.q0
    eta = linear_predictor(dataset, params)
    hat = initial_hat(dataset, params, eta, config)
    return BoostState(
        params=params,
        eta=eta,
        mu=sigmoid(eta),
        hat=hat,
        q_history=[config.q0],
        hat_trace=[dataset.n_rows - hat.trace_p()],
    )


def fairness_curvature(config: FitConfig, n_rows: int) -> float:
    """Coefficient ``kappa`` of ``a_r a_r^T`` in FH; the penalty is ``kappa/2 (a @ delta)^2``."""
    if config.boost_rho_scale == "objective":
        return 2.0 * config.rho / n_rows
    return config.rho


def _component_delta(params: ModelParams, r: int) -> np.ndarray:
    return np.concatenate([[params.beta0, params.beta[r - 1]], params.b])


def component_step(
    state: BoostState, dataset: Dataset, ctx: FairnessContext, config: FitConfig, r: int
) -> ComponentStep:
    """Fairness-penalised Newton increment on ``(beta0, beta_r, b)``.

    ``FH = A_r^T W A_r + K + kappa a_r a_r^T`` and
    ``FS = A_r^T (y - mu) - K delta_r - kappa (a @ delta) a_r``, with
    ``kappa`` from :func:`fairness_curvature`.
    """
    if state.params.q <= 0:
        raise ValueError("variance component must be positive")
    design = ComponentDesign(dataset, r)
    link = link_from_eta(state.eta)
    k = penalty_matrix(dataset.n_strata, state.params.q)
    a_r = restrict_to_component(ctx, r)
    scale = fairness_curvature(config, ctx.n_total)
    delta_r = _component_delta(state.params, r)
    fisher = design.weighted_gram(link.w) + k + scale * np.outer(a_r, a_r)
    fisher = (fisher + fisher.T) / 2.0
    # W D^-1 = I for the logit link
    score = design.rmatmul(dataset.labels - link.mu) - k @ delta_r
    score = score - scale * float(ctx.a_full @ state.params.delta()) * a_r
    increment = _solve_or_ridge(fisher, score, config.ridge_eps)
    if not np.all(np.isfinite(increment)):
        raise np.linalg.LinAlgError(f"non-finite increment for component {r}")
    return ComponentStep(r=r, increment=increment, fisher=fisher)


def _trial_delta(params: ModelParams, step: ComponentStep) -> np.ndarray:
    delta = params.delta()
    p = params.beta.shape[0]
    delta[0] += step.increment[0]
    delta[step.r] += step.increment[1]
    delta[1 + p :] += step.increment[2:]
    return delta


def bic_score(
    state: BoostState,
    dataset: Dataset,
    ctx: FairnessContext,
    config: FitConfig,
    candidate: ComponentStep,
) -> float:
    """``-2 Omega + 2 tr(H_r) log(n)`` for a candidate step.

    ``Omega`` is the Bernoulli log-likelihood at the post-step mean minus the
    fairness penalty ``kappa/2 (a @ delta)^2`` at the post-step parameters.
    """
    design = ComponentDesign(dataset, candidate.r)
    d = link_from_eta(state.eta).d
    eta_trial = state.eta + design.matmul(candidate.increment)
    mu_trial = sigmoid(eta_trial)
    delta_trial = _trial_delta(state.params, candidate)
    omega = bernoulli_loglik(dataset.labels, mu_trial)
    omega -= 0.5 * fairness_curvature(config, ctx.n_total) * float(ctx.a_full @ delta_trial) ** 2
    fh_inv = np.linalg.inv(candidate.fisher)
    trace_h = dataset.n_rows - state.hat.trace_p() + state.hat.trace_mp(design, d, fh_inv)
    return -2.0 * omega + 2.0 * trace_h * math.log(dataset.n_strata)


def boost_iteration(
    state: BoostState, dataset: Dataset, ctx: FairnessContext, config: FitConfig
) -> BoostState:
    """Evaluate every component, commit the one with the smallest BIC."""
    p = dataset.n_features
    bics = np.full(p, np.inf)
    steps: dict[int, ComponentStep] = {}
    for r in range(1, p + 1):
        try:
            step = component_step(state, dataset, ctx, config, r)
            step.bic = bic_score(state, dataset, ctx, config, step)
        except np.linalg.LinAlgError as exc:
            logger.debug("component %d skipped: %s", r, exc)
            continue
        if np.isfinite(step.bic):
            bics[r - 1] = step.bic
            steps[r] = step
    if not steps:
        raise BoostingError("every candidate component failed")
    j = int(np.argmin(bics)) + 1  # argmin returns the first minimum
    best = steps[j]

    d = link_from_eta(state.eta).d
    design = ComponentDesign(dataset, j)
    state.hat.commit(design, d, np.linalg.inv(best.fisher))

    params = state.params
    beta = params.beta.copy()
    beta[j - 1] = beta[j - 1] + best.increment[1]
    new_params = ModelParams(
        beta0=params.beta0 + best.increment[0],
        beta=beta,
        b=params.b + best.increment[2:],
        q=params.q,
    )
    eta = linear_predictor(dataset, new_params)
    state.params = new_params
    state.eta = eta
    state.mu = sigmoid(eta)
    state.selected.append(j)
    state.bic_trace.append(bics)
    state.hat_trace.append(dataset.n_rows - state.hat.trace_p())
    return state


def posterior_variances(dataset: Dataset, params: ModelParams, d: np.ndarray) -> np.ndarray:
    """Approximate posterior variance of each random intercept.

    Diagonal of the b-block of the inverse pseudo-Fisher matrix of the full
    model, obtained per stratum through the Schur complement of the fixed
    effect block.  The fixed block includes the intercept column.
    """
    starts = np.concatenate([[0], np.cumsum(dataset.stratum_sizes)[:-1]])
    xt = dataset.fixed_design()
    f_i = np.add.reduceat(d, starts) + 1.0 / params.q
    f_tilde = np.add.reduceat(xt * d[:, None], starts, axis=0)
    f_hat = xt.T @ (xt * d[:, None])
    schur = f_hat - (f_tilde / f_i[:, None]).T @ f_tilde
    try:
        sol = np.linalg.solve(schur, f_tilde.T)
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(schur + 1e-8 * np.eye(schur.shape[0]), f_tilde.T)
    quad = np.einsum("ij,ji->i", f_tilde, sol)
    return 1.0 / f_i + quad / f_i**2


def combine_variance(v: np.ndarray, b: np.ndarray) -> float:
    return max(float(np.mean(v + b * b)), Q_FLOOR)


def variance_update(state: BoostState, dataset: Dataset) -> float:
    d = link_from_eta(state.eta).d
    return combine_variance(posterior_variances(dataset, state.params, d), state.params.b)


def fit_fair_glmm(dataset: Dataset, config: FitConfig) -> tuple[ModelParams, FitTrace]:
    """Warm start, then alternate boosting iterations and variance updates.

    Stops once ``|Q_l - Q_{l-1}| < q_tol`` or after ``l_max`` iterations.
    """
    state = warm_start(dataset, config)
    ctx = constraint_vector(dataset)
    converged = config.l_max == 0
    message = ""
    it = 0
    for it in range(1, config.l_max + 1):
        try:
            boost_iteration(state, dataset, ctx, config)
        except BoostingError as exc:
            message = f"iteration {it} aborted: {exc}"
            logger.warning(message)
            it -= 1
            break
        q_old = state.params.q
        q_new = variance_update(state, dataset)
        state.params.q = q_new
        state.q_history.append(q_new)
        if abs(q_new - q_old) < config.q_tol:
            converged = True
            break
    if not converged and not message:
        message = f"variance component not converged after {config.l_max} iterations"
    trace = FitTrace(
        selected=state.selected,
        bic=state.bic_trace,
        q_history=state.q_history,
        hat_trace=state.hat_trace,
        iterations=len(state.selected),
        converged=converged,
        message=message,
        metadata={
            "initial_hat_weights": "warm-start",
            "hat_method": "dense" if isinstance(state.hat, DenseHat) else "hutchinson",
        },
    )
    return state.params.copy(), trace


def fit_glmm(dataset: Dataset, config: FitConfig) -> tuple[ModelParams, FitTrace]:
    return fit_fair_glmm(dataset, replace(config, rho=0.0))
