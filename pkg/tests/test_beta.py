import logging

import numpy as np
import pytest
from scipy.special import gammaln, psi

from mmesbm._kernels import _log_rising, beta_increment, damped_direction
from mmesbm.beta import (
    NumericalError,
    approximate_standard_errors,
    beta_gradient,
    beta_hessian,
    beta_objective,
    estimate_beta,
    init_beta_mom,
    prior_concentration,
)
from mmesbm.generator import GenerativeSpec, sample_network
from mmesbm.network import CovariateMatrix
from mmesbm.vb import ModelConfig, fit


def _instance(seed, n=5, g=2, p=2):
    rng = np.random.default_rng(seed)
    cov = CovariateMatrix.from_columns(rng.normal(size=(n, p - 1))) if p > 1 \
        else CovariateMatrix.intercept_only(n)
    beta = rng.normal(scale=0.8, size=(g, p))
    gamma = rng.gamma(2.0, 1.5, size=(n, g)) + 0.1
    return cov, beta, gamma


def _objective_by_hand(beta, cov, gamma):
    delta = np.exp(cov.values @ beta.T)
    elog = psi(gamma) - psi(gamma.sum(axis=1, keepdims=True))
    return np.sum(gammaln(delta.sum(axis=1)) - gammaln(delta).sum(axis=1)
                  + ((delta - 1) * elog).sum(axis=1))


def test_objective_matches_direct_formula():
    cov, beta, gamma = _instance(0, n=7, g=3, p=3)
    assert beta_objective(beta, cov, gamma) == pytest.approx(_objective_by_hand(beta, cov, gamma), rel=1e-13)


def test_single_group_gradient_and_hessian_vanish():
    cov, beta, gamma = _instance(1, g=1, p=3)
    assert np.all(beta_gradient(beta, cov, gamma) == 0.0)
    assert np.all(beta_hessian(beta, cov, gamma) == 0.0)


def test_symmetric_groups_have_equal_gradient_blocks():
    cov, beta, gamma = _instance(2, g=2, p=2)
    beta[1] = beta[0]
    gamma[:, 1] = gamma[:, 0]
    grad = beta_gradient(beta, cov, gamma).reshape(beta.shape)
    assert np.allclose(grad[0], grad[1], rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_finite_differences(seed):
    cov, beta, gamma = _instance(seed, n=5, g=2, p=2)
    h = 1e-5
    fd = np.zeros_like(beta)
    for idx in np.ndindex(beta.shape):
        e = np.zeros_like(beta)
        e[idx] = h
        fd[idx] = (_objective_by_hand(beta + e, cov, gamma) - _objective_by_hand(beta - e, cov, gamma)) / (2 * h)
    grad = beta_gradient(beta, cov, gamma).reshape(beta.shape)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_hessian_symmetric_and_matches_gradient_differences(seed):
    cov, beta, gamma = _instance(seed, n=6, g=3, p=2)
    hess = beta_hessian(beta, cov, gamma)
    assert np.max(np.abs(hess - hess.T)) < 1e-10
    h = 1e-5
    fd = np.zeros_like(hess)
    for k in range(beta.size):
        e = np.zeros(beta.size)
        e[k] = h
        e = e.reshape(beta.shape)
        fd[:, k] = (beta_gradient(beta + e, cov, gamma) - beta_gradient(beta - e, cov, gamma)).ravel() / (2 * h)
    assert np.linalg.norm(hess - fd) / np.linalg.norm(fd) < 1e-4


def test_mom_equal_rows_falls_back_to_uniform():
    cov = CovariateMatrix.intercept_only(4)
    beta = init_beta_mom(np.full((4, 2), 2.0), cov)
    assert np.allclose(beta, 0.0)


def test_mom_alternating_rows():
    cov = CovariateMatrix.intercept_only(4)
    gamma = np.array([[3.0, 1.0], [1.0, 3.0]] * 2)
    beta = init_beta_mom(gamma, cov)
    assert np.allclose(beta[:, 0], np.log(2.0), rtol=1e-12)


def test_mom_single_group_gives_finite_intercept():
    cov = CovariateMatrix.intercept_only(3)
    beta = init_beta_mom(np.array([[2.0], [5.0], [1.0]]), cov)
    assert beta.shape == (1, 1) and np.isfinite(beta).all()


def test_mom_leaves_covariate_effects_at_zero():
    rng = np.random.default_rng(0)
    cov = CovariateMatrix.from_columns(rng.normal(size=(10, 2)))
    beta = init_beta_mom(rng.gamma(2, size=(10, 3)), cov)
    assert np.all(beta[:, 1:] == 0.0)


def test_single_group_estimate_is_unchanged():
    cov, beta, gamma = _instance(3, g=1, p=2)
    out, diag = estimate_beta(beta, cov, gamma)
    assert np.array_equal(out, beta) and diag.iterations == 0


@pytest.mark.parametrize("seed", range(4))
def test_newton_reaches_stationary_point_and_ascends(seed):
    cov, beta0, gamma = _instance(seed, n=30, g=3, p=2)
    beta, diag = estimate_beta(beta0, cov, gamma)
    assert diag.gradient_norm < 1e-6
    assert beta_objective(beta, cov, gamma) >= beta_objective(beta0, cov, gamma)
    # the ascent direction from a perturbed point goes back uphill
    assert beta_objective(beta, cov, gamma) >= beta_objective(beta + 1e-3, cov, gamma)


def test_nonfinite_start_is_rejected():
    cov, beta, gamma = _instance(4)
    beta[0, 0] = np.nan
    with pytest.raises(NumericalError):
        estimate_beta(beta, cov, gamma)


def test_increment_matches_objective_difference():
    cov, b0, gamma = _instance(5, n=9, g=3, p=3)
    b1 = b0 + 0.2
    elog = psi(gamma) - psi(gamma.sum(axis=1, keepdims=True))
    inc, ok = beta_increment(b0, b1, np.ascontiguousarray(cov.values), elog)
    assert ok
    want = _objective_by_hand(b1, cov, gamma) - _objective_by_hand(b0, cov, gamma)
    assert inc == pytest.approx(want, rel=1e-11)


def test_compiled_log_rising_agrees_with_lgamma_where_that_is_safe():
    for a, d in [(0.3, 2.0), (4.0, -1.5), (12.0, 3.0), (50.0, -20.0), (7.0, 0.0)]:
        assert _log_rising(a, d) == pytest.approx(gammaln(a + d) - gammaln(a), abs=1e-13)


def test_damped_direction_handles_indefinite_hessian():
    hess = np.array([[1.0, 0.0], [0.0, -2.0]])
    grad = np.array([1.0, 1.0])
    step, lam, ok = damped_direction(hess, grad)
    assert ok and lam > 1.0
    assert step @ grad > 0


def test_rare_indicator_hits_clip_bound_with_warning(caplog):
    n = 40
    x = np.zeros(n)
    x[:2] = 1.0
    cov = CovariateMatrix.from_columns(x, ["rare"], ["binary"])
    spec = GenerativeSpec(cov, np.array([[-1.0, -6.0], [-1.0, 6.0]]),
                          theta=[[0.6, 0.05], [0.05, 0.6]], seed=0)
    net, _ = sample_network(spec)
    with caplog.at_level(logging.WARNING, logger="mmesbm"):
        res = fit(net, cov, config=ModelConfig(n_groups=2, seed=0, n_restarts=1, clip_bound=5.0))
    assert np.max(np.abs(res.beta)) <= 5.0
    assert "rare" in res.diagnostics["beta"]["separability"]
    assert any("separability" in r.getMessage() for r in caplog.records)


def test_concentration_ceiling_is_respected():
    rng = np.random.default_rng(9)
    cov = CovariateMatrix.from_columns(rng.normal(size=20))
    # memberships pinned at a common mean pull the concentration upwards
    gamma = np.full((20, 2), 1e9)
    beta, diag = estimate_beta(np.zeros((2, 2)), cov, gamma, max_log_concentration=4.0)
    assert np.max(cov.values @ beta.T) <= 4.0 + 1e-12
    assert diag.concentration_capped


def test_standard_errors_are_positive():
    cov, beta0, gamma = _instance(6, n=40, g=2, p=2)
    beta, _ = estimate_beta(beta0, cov, gamma)
    se, damping = approximate_standard_errors(beta, cov, gamma)
    assert se.shape == beta.shape and np.all(se > 0) and damping >= 0


def test_prior_concentration_is_exp_linear_predictor():
    cov, beta, _ = _instance(7, n=4, g=2, p=2)
    assert np.allclose(prior_concentration(beta, cov), np.exp(cov.values @ beta.T))
