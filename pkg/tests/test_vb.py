import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from mmesbm.network import CovariateMatrix, Network
from mmesbm.vb import (
    FitResult,
    ModelConfig,
    VariationalState,
    compute_elbo,
    fit,
    initial_state,
    run_vb,
    update_gamma,
    update_phi,
    update_zeta,
)

from oracles import exact_log_marginal
from planted import planted_three_group


def _random_state(rng, n, g):
    phi1 = rng.dirichlet(np.ones(g), size=(n, n)).transpose(2, 0, 1)
    phi2 = rng.dirichlet(np.ones(g), size=(n, n)).transpose(2, 0, 1)
    return VariationalState(phi1, phi2, rng.gamma(2.0, size=(n, g)) + 0.5,
                            rng.gamma(2.0, size=(g, g)) + 0.5, rng.gamma(2.0, size=(g, g)) + 0.5)


def _net(y, mask=None):
    y = np.asarray(y)
    if mask is None:
        return Network.from_adjacency(y)
    return Network(y, mask)


def test_update_zeta_counts_links_and_nonlinks():
    y = np.array([[0, 1], [0, 0]])
    net = _net(y)
    g = 2
    phi1 = np.zeros((g, 2, 2))
    phi2 = np.zeros((g, 2, 2))
    phi1[:, 0, 1] = [1.0, 0.0]
    phi2[:, 0, 1] = [0.0, 1.0]
    phi1[:, 1, 0] = [0.5, 0.5]
    phi2[:, 1, 0] = [1.0, 0.0]
    state = VariationalState(phi1, phi2, np.ones((2, g)), np.ones((g, g)), np.ones((g, g)))
    z1, z2 = update_zeta(state, net, ModelConfig(n_groups=2))
    assert np.array_equal(z1, [[1.0, 2.0], [1.0, 1.0]])
    assert np.array_equal(z2, [[1.5, 1.0], [1.5, 1.0]])


def test_update_gamma_skips_unobserved_dyads():
    rng = np.random.default_rng(0)
    n, g = 4, 3
    state = _random_state(rng, n, g)
    mask = ~np.eye(n, dtype=bool)
    mask[0, 2] = False
    net = _net(np.zeros((n, n), dtype=int), mask)
    delta = rng.gamma(1.0, size=(n, g))
    got = update_gamma(state, delta, net)
    want = delta.copy()
    for i in range(n):
        for j in range(n):
            if mask[i, j]:
                want[i] += state.phi1[:, i, j]
                want[j] += state.phi2[:, i, j]
    assert np.allclose(got, want, rtol=1e-14)


def test_update_phi_single_pass_matches_high_precision_oracle():
    rng = np.random.default_rng(1)
    n, g = 3, 2
    state = _random_state(rng, n, g)
    y = np.array([[0, 1, 0], [1, 0, 0], [1, 1, 0]])
    net = _net(y)
    i, j = 2, 0
    p2 = state.phi2[:, i, j].copy()
    update_phi(state, net, n_inner=1, dyad=(i, j))

    def elog_tau(k):
        return mpmath.digamma(state.gamma[i, k]) - mpmath.digamma(state.gamma[i].sum())

    def elog_theta(a, b):
        z1, z2 = state.zeta1[a, b], state.zeta2[a, b]
        return mpmath.digamma(z1) - mpmath.digamma(z1 + z2)  # y = 1 for this dyad

    logits = [elog_tau(a) + sum(p2[b] * elog_theta(a, b) for b in range(g)) for a in range(g)]
    tot = sum(mpmath.e ** v for v in logits)
    want = [float(mpmath.e ** v / tot) for v in logits]
    assert np.allclose(state.phi1[:, i, j], want, rtol=1e-13)


def test_unobserved_dyad_update_is_refused():
    rng = np.random.default_rng(2)
    state = _random_state(rng, 3, 2)
    mask = ~np.eye(3, dtype=bool)
    mask[0, 1] = False
    with pytest.raises(ValueError):
        update_phi(state, _net(np.zeros((3, 3), dtype=int), mask), dyad=(0, 1))


def test_per_dyad_updates_equal_full_update():
    rng = np.random.default_rng(3)
    n, g = 5, 3
    y = (rng.random((n, n)) < 0.4).astype(int)
    np.fill_diagonal(y, 0)
    net = _net(y)
    state = _random_state(rng, n, g)
    by_dyad = state.copy()
    update_phi(state, net, n_inner=3)
    for i in range(n):
        for j in range(n):
            if i != j:
                update_phi(by_dyad, net, n_inner=3, dyad=(i, j))
    off = ~np.eye(n, dtype=bool)
    assert np.allclose(state.phi1[:, off], by_dyad.phi1[:, off], atol=1e-13)
    assert np.allclose(state.phi2[:, off], by_dyad.phi2[:, off], atol=1e-13)


def test_single_group_bound_is_exact_for_two_actors():
    net = _net([[0, 1], [0, 0]])
    config = ModelConfig(n_groups=1)
    state = initial_state(net, 1, np.random.default_rng(0))
    delta = np.ones((2, 1))
    state.gamma = update_gamma(state, delta, net)
    state.zeta1, state.zeta2 = update_zeta(state, net, config)
    assert compute_elbo(state, net, delta, config) == pytest.approx(math.log(1 / 6), abs=1e-13)


def test_single_group_converges_immediately():
    net, cov, _ = planted_three_group(0, n_actors=30)
    res = fit(net, cov, config=ModelConfig(n_groups=1, seed=0, n_restarts=1))
    assert res.converged and res.iterations <= 2


@pytest.mark.parametrize("seed", range(3))
def test_sweeps_never_lower_the_bound(seed):
    net, cov, _ = planted_three_group(seed, n_actors=40)
    res = fit(net, cov, config=ModelConfig(n_groups=3, seed=seed, n_restarts=1))
    trace = np.array(res.elbo_trace)
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))


def test_elbo_from_sweep_matches_direct_computation():
    net, cov, _ = planted_three_group(4, n_actors=25)
    config = ModelConfig(n_groups=2, seed=4, n_restarts=1, max_iterations=5, estimate_beta=False)
    res = fit(net, cov, config=config)
    delta = np.ones((25, 2))
    # the recorded value was computed before phi moved again, so recompute from a fresh sweep
    state = res.state.copy()
    res2 = run_vb(net, cov, state, np.zeros((2, 1)), config.replace(max_iterations=1))
    assert res2.elbo == pytest.approx(compute_elbo(res2.state, net, delta, config), rel=1e-12)


def test_bound_lies_below_exact_marginal():
    y = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]])
    net = _net(y)
    config = ModelConfig(n_groups=2, seed=0, n_restarts=3, estimate_beta=False)
    res = fit(net, config=config)
    assert res.elbo <= exact_log_marginal(y, np.ones((3, 2)))


def _monte_carlo_elbo(state, y, delta, alpha, n_draws, rng):
    n, g = state.gamma.shape
    total = np.zeros(n_draws)
    taus = np.stack([rng.dirichlet(state.gamma[i], size=n_draws) for i in range(n)], axis=1)
    theta = rng.beta(state.zeta1, state.zeta2, size=(n_draws, g, g))
    for i in range(n):
        total += stats.dirichlet.logpdf(taus[:, i].T, delta[i])
        total -= stats.dirichlet.logpdf(taus[:, i].T, state.gamma[i])
    total += stats.beta.logpdf(theta, alpha, alpha).sum(axis=(1, 2))
    total -= stats.beta.logpdf(theta, state.zeta1, state.zeta2).sum(axis=(1, 2))
    draws = np.arange(n_draws)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a = (rng.random(n_draws)[:, None] > np.cumsum(state.phi1[:, i, j])).sum(axis=1)
            b = (rng.random(n_draws)[:, None] > np.cumsum(state.phi2[:, i, j])).sum(axis=1)
            a, b = np.minimum(a, g - 1), np.minimum(b, g - 1)
            t = theta[draws, a, b]
            total += np.log(taus[draws, i, a]) + np.log(taus[draws, j, b])
            total += np.log(t) if y[i, j] else np.log1p(-t)
            total -= np.log(state.phi1[a, i, j]) + np.log(state.phi2[b, i, j])
    return total.mean(), total.std() / math.sqrt(n_draws)


def test_elbo_agrees_with_monte_carlo_estimate():
    y = np.array([[0, 1, 0], [1, 0, 1], [0, 0, 0]])
    net = _net(y)
    config = ModelConfig(n_groups=2, seed=1, n_restarts=1, estimate_beta=False, max_iterations=3)
    res = fit(net, config=config)
    est, se = _monte_carlo_elbo(res.state, y, np.ones((3, 2)), 1.0, 40000, np.random.default_rng(5))
    elbo = compute_elbo(res.state, net, np.ones((3, 2)), config)
    assert abs(est - elbo) < 4 * se + 1e-3


def test_fit_is_deterministic_for_a_seed():
    net, cov, _ = planted_three_group(5, n_actors=30)
    config = ModelConfig(n_groups=3, seed=11, n_restarts=2)
    a, b = fit(net, cov, config=config), fit(net, cov, config=config)
    assert a.elbo_trace == b.elbo_trace
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.gamma, b.gamma)


def test_save_and_load_roundtrip(tmp_path):
    net, cov, _ = planted_three_group(6, n_actors=25)
    res = fit(net, cov, config=ModelConfig(n_groups=2, seed=3, n_restarts=1))
    path = tmp_path / "fit.json"
    res.save(path)
    back = FitResult.load(path)
    assert np.array_equal(back.beta, res.beta)
    assert np.array_equal(back.tau_hat, res.tau_hat)
    assert back.elbo_trace == res.elbo_trace
    assert back.config.to_dict() == res.config.to_dict()


def test_permuted_fit_relabels_consistently():
    net, cov, _ = planted_three_group(7, n_actors=25)
    res = fit(net, cov, config=ModelConfig(n_groups=3, seed=0, n_restarts=1))
    perm = [2, 0, 1]
    p = res.permuted(perm)
    assert np.allclose(p.tau_hat, res.tau_hat[:, perm], rtol=1e-15)
    assert np.array_equal(p.theta_hat, res.theta_hat[np.ix_(perm, perm)])


def test_config_replace_carries_constant_prior():
    c = ModelConfig(n_groups=2, alpha1=2.0)
    d = c.replace(n_groups=4)
    assert d.alpha1.shape == (4, 4) and np.all(d.alpha1 == 2.0)
    assert c.n_groups == 2


def test_config_replace_refuses_structured_prior_without_restatement():
    c = ModelConfig(n_groups=2, alpha1=[[2.0, 1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        c.replace(n_groups=3)
    assert c.replace(n_groups=3, alpha1=1.0).alpha1.shape == (3, 3)


@pytest.mark.parametrize("kwargs", [{"n_groups": 0}, {"n_groups": 2, "alpha1": -1.0},
                                    {"n_groups": 2, "n_restarts": 0}, {"n_groups": 2, "init": "kmeans"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)


def test_beta_shape_is_checked():
    net, cov, _ = planted_three_group(8, n_actors=20)
    state = initial_state(net, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_vb(net, cov, state, np.zeros((3, 1)), ModelConfig(n_groups=2))


def test_covariate_size_mismatch():
    net, _, _ = planted_three_group(9, n_actors=20)
    with pytest.raises(ValueError):
        fit(net, CovariateMatrix.intercept_only(10), config=ModelConfig(n_groups=2))
