from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from fairglmm.data_model import FitConfig, ModelParams, build_dataset
from fairglmm.fairness import constraint_vector
from fairglmm.glmm_boost import (
    BoostState,
    ProbeHat,
    boost_iteration,
    bic_score,
    combine_variance,
    component_step,
    fit_fair_glmm,
    fit_glmm,
    initial_hat,
    posterior_variances,
    variance_update,
    warm_start,
)
from fairglmm.logit_math import linear_predictor, sigmoid
from fairglmm.lr_solvers import fit_crlr, fit_fair_crlr
from oracles import dense_bic, dense_m0, dense_pieces, dense_posterior_variances, random_state


def _data(seed, n_rows=10, p=2, n=2):
    rng = np.random.default_rng(seed)
    s = np.tile([0.0, 1.0], n_rows)[:n_rows]
    g = np.tile(np.arange(1, n + 1), n_rows)[:n_rows]
    x = rng.normal(size=(n_rows, p))
    y = (rng.random(n_rows) < 0.5).astype(float)
    y[:2] = [0.0, 1.0]
    return build_dataset(x, y, g, s)


@pytest.mark.parametrize("scale", ["hessian", "objective"])
@pytest.mark.parametrize("seed", range(5))
def test_component_step_matches_dense_oracle(seed, scale):
    ds = _data(seed)
    state = random_state(ds, seed)
    cfg = FitConfig(boost_rho_scale=scale)
    for r in (1, 2):
        fh, fs, _, ctx, _ = dense_pieces(ds, state, cfg, r)
        step = component_step(state, ds, ctx, cfg, r)
        assert np.allclose(step.fisher, fh, rtol=0, atol=1e-8)
        assert np.allclose(step.increment, np.linalg.solve(fh, fs), rtol=0, atol=1e-8)
        assert np.array_equal(step.fisher, step.fisher.T)


@pytest.mark.parametrize("scale", ["hessian", "objective"])
@pytest.mark.parametrize("seed", range(5))
def test_bic_matches_dense_oracle(seed, scale):
    ds = _data(seed)
    state = random_state(ds, seed)
    cfg = FitConfig(boost_rho_scale=scale)
    ctx = constraint_vector(ds)
    for r in (1, 2):
        step = component_step(state, ds, ctx, cfg, r)
        assert bic_score(state, ds, ctx, cfg, step) == pytest.approx(dense_bic(ds, state, cfg, r), abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_variance_update_matches_full_fisher_inverse(seed):
    ds = _data(seed)
    state = random_state(ds, seed)
    v = dense_posterior_variances(ds, state.params, state.mu)
    d = state.mu * (1 - state.mu)
    assert np.allclose(posterior_variances(ds, state.params, d), v, rtol=0, atol=1e-8)
    assert variance_update(state, ds) == pytest.approx(np.mean(v + state.params.b ** 2), abs=1e-8)


def test_combine_variance_arithmetic_and_floor():
    assert combine_variance(np.zeros(3), np.ones(3)) == 1.0
    assert combine_variance(np.zeros(2), np.zeros(2)) == 1e-6


def test_initial_hat_is_i_minus_m0():
    ds = _data(0)
    params = ModelParams.from_delta(np.full(1 + ds.n_features + ds.n_strata, 0.1), ds.n_features, 2.0)
    eta = linear_predictor(ds, params)
    hat = initial_hat(ds, params, eta, FitConfig())
    assert np.allclose(hat.p, np.eye(ds.n_rows) - dense_m0(ds, params, eta), atol=1e-10)


def test_probe_hat_is_unbiased_for_trace():
    ds = _data(1, n_rows=40, n=3)
    state = random_state(ds, 1)
    params = state.params
    cfg = FitConfig(dense_hat_limit=10, hutchinson_probes=4000, seed=3)
    probe = initial_hat(ds, params, state.eta, cfg)
    exact = initial_hat(ds, params, state.eta, FitConfig())
    assert isinstance(probe, ProbeHat)
    assert probe.trace_p() == pytest.approx(exact.trace_p(), rel=0.05)


def test_warm_start_comes_from_fair_crlr():
    ds = _data(2, n_rows=30, n=3)
    cfg = FitConfig()
    state = warm_start(ds, cfg)
    assert np.array_equal(state.params.delta(), fit_fair_crlr(ds, cfg).params.delta())
    assert state.params.q == 2.0
    assert np.allclose(state.eta, ds.full_design() @ state.params.delta(), atol=1e-12)
    plain = warm_start(ds, replace(cfg, rho=0.0))
    assert np.array_equal(plain.params.delta(), fit_crlr(ds, cfg).params.delta())


def test_l_max_zero_returns_warm_start():
    ds = _data(3, n_rows=30, n=3)
    cfg = FitConfig(l_max=0)
    params, trace = fit_fair_glmm(ds, cfg)
    assert np.array_equal(params.delta(), warm_start(ds, cfg).params.delta())
    assert trace.iterations == 0


def _population(seed, n_rows=200, n=10, beta=(0.0, 0.0, 2.0, 0.0)):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_rows, 3))
    g = rng.integers(1, n + 1, n_rows)
    s = rng.integers(0, 2, n_rows)
    eta = beta[0] + x @ np.asarray(beta[1:]) + rng.normal(size=n)[g - 1]
    y = (rng.random(n_rows) < 1 / (1 + np.exp(-eta))).astype(float)
    return build_dataset(x, y, g, s)


def test_iteration_updates_only_selected_coordinate():
    ds = _population(0)
    cfg = FitConfig()
    state = warm_start(ds, cfg)
    before = state.params.beta.copy()
    boost_iteration(state, ds, constraint_vector(ds), cfg)
    j = state.selected[-1]
    others = [k for k in range(ds.n_features) if k != j - 1]
    assert np.array_equal(state.params.beta[others], before[others])
    assert np.allclose(state.eta, ds.full_design() @ state.params.delta(), atol=1e-12)


def test_relevant_covariate_selected_first_from_null_start():
    cfg = FitConfig(rho=0.0)
    hits = 0
    for seed in range(20):
        ds = _population(seed)
        params = ModelParams.zeros(3, ds.n_strata, q=cfg.q0)
        eta = linear_predictor(ds, params)
        state = BoostState(params, eta, sigmoid(eta), initial_hat(ds, params, eta, cfg), [cfg.q0])
        boost_iteration(state, ds, constraint_vector(ds), cfg)
        hits += state.selected[0] == 2
    assert hits >= 18


def test_single_covariate_always_selected():
    ds = _population(1)
    ds = build_dataset(ds.features[:, :1], ds.labels, ds.stratum_ids[ds.group], ds.sensitive)
    _, trace = fit_glmm(ds, FitConfig(l_max=10))
    assert set(trace.selected) == {1}


def test_glmm_is_fair_glmm_with_zero_rho():
    ds = _population(2)
    p1, t1 = fit_glmm(ds, FitConfig(l_max=20))
    p2, t2 = fit_fair_glmm(ds, FitConfig(l_max=20, rho=0.0))
    assert np.array_equal(p1.delta(), p2.delta())
    assert t1.selected == t2.selected and t1.q_history == t2.q_history


def test_trace_properties():
    ds = _population(3)
    _, trace = fit_fair_glmm(ds, FitConfig(l_max=30))
    assert all(q > 0 for q in trace.q_history)
    assert all(b >= a - 1e-8 for a, b in zip(trace.hat_trace, trace.hat_trace[1:]))
    assert len(trace.bic) == trace.iterations == len(trace.selected)
    if trace.converged:
        assert abs(trace.q_history[-1] - trace.q_history[-2]) < 1e-4


def test_single_stratum_bic_is_minus_two_omega():
    ds = _data(4)
    ds = build_dataset(ds.features, ds.labels, np.ones(ds.n_rows), ds.sensitive)
    state = random_state(ds, 4)
    cfg = FitConfig()
    ctx = constraint_vector(ds)
    step = component_step(state, ds, ctx, cfg, 1)
    bic = bic_score(state, ds, ctx, cfg, step)
    _, _, _, _, kappa = dense_pieces(ds, state, cfg, 1)
    delta = state.params.delta()
    delta[0] += step.increment[0]
    delta[1] += step.increment[1]
    delta[3:] += step.increment[2:]
    mu = sigmoid(ds.full_design() @ delta)
    omega = np.sum(ds.labels * np.log(mu) + (1 - ds.labels) * np.log(1 - mu)) - kappa / 2 * (ctx.a_full @ delta) ** 2
    assert bic == pytest.approx(-2 * omega, abs=1e-9)
