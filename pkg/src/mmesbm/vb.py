"""Coordinate-ascent variational Bayes for the mixed-membership of experts
stochastic blockmodel.

Variational factors: ``phi1[:, i, j]`` / ``phi2[:, i, j]`` are the sender
and receiver role distributions of dyad (i, j), stored group-major as
G x N x N arrays; ``gamma[i]`` is the Dirichlet
posterior over actor i's memberships; ``zeta1``/``zeta2`` are the Beta
shapes of each block probability. Only observed dyads (``network.mask``)
enter any sum.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from . import beta as beta_mod
from ._kernels import normalize_roles, role_logits, role_statistics
from .network import CovariateMatrix
from .numerics import digamma, dirichlet_expected_log, log_rising, normalize_log, xlogx

log = logging.getLogger(__name__)


class FitDivergenceError(beta_mod.NumericalError):
    """Non-finite lower bound during fitting; carries the offending state."""

    def __init__(self, message, state=None, iteration=None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


@dataclass
class ModelConfig:
    n_groups: int
    alpha1: object = None
    alpha2: object = None
    max_iterations: int = 500
    elbo_rel_tolerance: float = 1e-6
    phi_inner_iterations: int = 3
    seed: object = None
    n_restarts: int = 5
    init_noise: float = 0.1
    estimate_beta: bool = True
    beta_interval: int = 1
    clip_bound: float = beta_mod.DEFAULT_CLIP
    max_log_concentration: float = beta_mod.DEFAULT_MAX_LOG_CONCENTRATION
    newton_max_iterations: int = 50
    newton_tolerance: float = 1e-6
    mom_average_components: bool = False
    init: str = "spectral"

    def __post_init__(self):
        if int(self.n_groups) < 1:
            raise ValueError("n_groups must be at least 1")
        self.n_groups = int(self.n_groups)
        g = self.n_groups
        for name in ("alpha1", "alpha2"):
            a = getattr(self, name)
            a = np.ones((g, g)) if a is None else np.broadcast_to(np.asarray(a, float), (g, g)).copy()
            if not np.all(a > 0):
                raise ValueError(f"{name} must be strictly positive")
            setattr(self, name, a)
        if self.phi_inner_iterations < 1 or self.beta_interval < 1:
            raise ValueError("phi_inner_iterations and beta_interval must be >= 1")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.init not in ("spectral", "random"):
            raise ValueError("init must be 'spectral' or 'random'")

    def to_dict(self):
        d = asdict(self)
        d["alpha1"] = self.alpha1.tolist()
        d["alpha2"] = self.alpha2.tolist()
        return d

    def replace(self, **changes):
        d = {k: copy.deepcopy(v) for k, v in self.__dict__.items()}
        if changes.get("n_groups", self.n_groups) != self.n_groups:
            # a constant prior carries over to the new size; anything else must be restated
            for name in ("alpha1", "alpha2"):
                a = d[name]
                if name not in changes:
                    if not np.all(a == a.flat[0]):
                        raise ValueError(f"{name} is not constant; pass it explicitly with n_groups")
                    d[name] = float(a.flat[0])
        d.update(changes)
        return ModelConfig(**d)


@dataclass
class VariationalState:
    phi1: np.ndarray
    phi2: np.ndarray
    gamma: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray

    @property
    def n_groups(self):
        return self.gamma.shape[1]

    def copy(self):
        return VariationalState(*(np.array(a, copy=True) for a in
                                  (self.phi1, self.phi2, self.gamma, self.zeta1, self.zeta2)))

    def permuted(self, perm):
        """Relabel groups: new group k is old group ``perm[k]``."""
        p = np.asarray(perm)
        return VariationalState(
            self.phi1[p], self.phi2[p], self.gamma[:, p],
            self.zeta1[np.ix_(p, p)], self.zeta2[np.ix_(p, p)],
        )

    def summary(self):
        return {
            "gamma": self.gamma.tolist(),
            "zeta1": self.zeta1.tolist(),
            "zeta2": self.zeta2.tolist(),
        }


def expected_log_theta(zeta1, zeta2):
    """(E[log theta], E[log(1 - theta)]) under Beta(zeta1, zeta2)."""
    tot = digamma(zeta1 + zeta2)
    return digamma(zeta1) - tot, digamma(zeta2) - tot


def _weights(network):
    m = network.mask.astype(float)
    y = network.adjacency.astype(float)
    return m * y, m * (1.0 - y)


def _block_counts(phi1, phi2, weight):
    g = phi1.shape[0]
    return (phi1.reshape(g, -1) * weight.ravel()) @ phi2.reshape(g, -1).T


def update_zeta(state, network, config):
    """Beta shapes from expected link / non-link counts per block."""
    w1, w0 = _weights(network)
    zeta1 = _block_counts(state.phi1, state.phi2, w1) + config.alpha1
    zeta2 = _block_counts(state.phi1, state.phi2, w0) + config.alpha2
    return zeta1, zeta2


def update_gamma(state, delta, network):
    """gamma[i] = delta[i] + sum_j phi1[:, i, j] + sum_j phi2[:, j, i] over observed dyads."""
    m = network.mask.astype(float)
    sent = (state.phi1 * m).sum(axis=2)
    received = (state.phi2 * m).sum(axis=1)
    return np.asarray(delta, dtype=float) + (sent + received).T


def update_phi(state, network, n_inner=3, dyad=None):
    """Alternate the sender / receiver role updates ``n_inner`` times.

    With ``dyad=None`` all observed dyads are updated at once; given gamma
    and zeta the dyads are independent, so this equals a sequential sweep.
    Updates ``state`` in place and returns it.
    """
    elogtau = dirichlet_expected_log(state.gamma)
    elog, elog1m = expected_log_theta(state.zeta1, state.zeta2)
    if dyad is not None:
        i, j = dyad
        if i == j or not network.mask[i, j]:
            raise ValueError(f"dyad {dyad} is not observed")
        table = elog if network.adjacency[i, j] else elog1m
        p1, p2 = state.phi1[:, i, j], state.phi2[:, i, j]
        for _ in range(n_inner):
            p1 = normalize_log(elogtau[i] + table @ p2)
            p2 = normalize_log(elogtau[j] + table.T @ p1)
        state.phi1[:, i, j], state.phi2[:, i, j] = p1, p2
        return state

    _phi_stats(state, network, n_inner)
    return state


def _phi_stats(state, network, n_inner):
    """Role update over all observed dyads; returns the sums the other updates need.

    (sent N x G, received N x G, link counts G x G, non-link counts G x G,
    sum of p log p), all over observed dyads only.
    """
    elogtau = dirichlet_expected_log(state.gamma)
    elog, elog1m = expected_log_theta(state.zeta1, state.zeta2)
    diff = elog - elog1m
    y = network.adjacency
    p1 = np.ascontiguousarray(state.phi1, dtype=float)
    p2 = np.ascontiguousarray(state.phi2, dtype=float)
    for _ in range(n_inner):
        role_logits(elogtau, elog1m, diff, p2, y, True, p1)
        np.exp(p1, out=p1)
        normalize_roles(p1)
        role_logits(elogtau, elog1m, diff, p1, y, False, p2)
        np.exp(p2, out=p2)
        normalize_roles(p2)
    tiny = np.finfo(float).tiny
    logp1 = np.log(np.maximum(p1, tiny))
    logp2 = np.log(np.maximum(p2, tiny))
    stats = role_statistics(p1, p2, logp1, logp2, y, network.mask)
    state.phi1, state.phi2 = p1, p2
    return stats


def compute_elbo(state, network, delta, config):
    """Evidence lower bound for the current variational state."""
    obs = network.mask
    w1, w0 = _weights(network)
    elog, elog1m = expected_log_theta(state.zeta1, state.zeta2)
    elogtau = dirichlet_expected_log(state.gamma)
    delta = np.asarray(delta, dtype=float)
    a1, a2 = config.alpha1, config.alpha2
    z1, z2 = state.zeta1, state.zeta2

    lik = np.sum(_block_counts(state.phi1, state.phi2, w1) * elog) + np.sum(
        _block_counts(state.phi1, state.phi2, w0) * elog1m
    )
    m = obs.astype(float)
    counts = ((state.phi1 * m).sum(axis=2) + (state.phi2 * m).sum(axis=1)).T
    tau_terms = _tau_terms(state.gamma, delta, counts, elogtau)
    prior_theta = np.sum(
        gammaln(a1 + a2) - gammaln(a1) - gammaln(a2) + (a1 - 1.0) * elog + (a2 - 1.0) * elog1m
    )
    ent_roles = np.sum((xlogx(state.phi1) + xlogx(state.phi2)) * m)
    q_theta = np.sum(
        gammaln(z1 + z2) - gammaln(z1) - gammaln(z2) + (z1 - 1.0) * elog + (z2 - 1.0) * elog1m
    )
    return float(lik + tau_terms + prior_theta - ent_roles - q_theta)


def _tau_terms(gamma, delta, counts, elogtau):
    """E[log p(Z | tau)] + E[log p(tau | delta)] - E[log q(tau)], summed over actors.

    Written with d = gamma - delta so that nothing of the size of delta is
    cancelled: exp(W beta) can reach 1e10 and beyond, where the textbook
    form loses all precision.
    """
    d = gamma - delta
    return float(
        np.sum(log_rising(delta, d)) - np.sum(log_rising(delta.sum(axis=1), d.sum(axis=1)))
        + np.sum((counts - d) * elogtau)
    )


def _elbo_from_stats(state, delta, config, stats):
    # same terms as compute_elbo, reusing the counts gathered during the phi sweep
    sent, received, links, nonlinks, ent_roles = stats
    elog, elog1m = expected_log_theta(state.zeta1, state.zeta2)
    elogtau = dirichlet_expected_log(state.gamma)
    a1, a2 = config.alpha1, config.alpha2
    z1, z2 = state.zeta1, state.zeta2
    lik = np.sum(links * elog) + np.sum(nonlinks * elog1m)
    tau_terms = _tau_terms(state.gamma, delta, sent + received, elogtau)
    prior_theta = np.sum(
        gammaln(a1 + a2) - gammaln(a1) - gammaln(a2) + (a1 - 1.0) * elog + (a2 - 1.0) * elog1m
    )
    q_theta = np.sum(
        gammaln(z1 + z2) - gammaln(z1) - gammaln(z2) + (z1 - 1.0) * elog + (z2 - 1.0) * elog1m
    )
    return float(lik + tau_terms + prior_theta - ent_roles - q_theta)


@dataclass
class FitResult:
    beta: np.ndarray
    gamma: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    elbo_trace: list
    converged: bool
    iterations: int
    config: ModelConfig
    seed: object = None
    column_names: tuple = ()
    diagnostics: dict = field(default_factory=dict)
    state: VariationalState = None

    @property
    def n_groups(self):
        return self.gamma.shape[1]

    @property
    def tau_hat(self):
        return self.gamma / self.gamma.sum(axis=1, keepdims=True)

    @property
    def theta_hat(self):
        return self.zeta1 / (self.zeta1 + self.zeta2)

    @property
    def elbo(self):
        return self.elbo_trace[-1]

    def permuted(self, perm):
        p = np.asarray(perm)
        out = copy.copy(self)
        out.beta = self.beta[p]
        out.gamma = self.gamma[:, p]
        out.zeta1 = self.zeta1[np.ix_(p, p)]
        out.zeta2 = self.zeta2[np.ix_(p, p)]
        out.state = None if self.state is None else self.state.permuted(p)
        return out

    def to_dict(self):
        return {
            "n_groups": self.n_groups,
            "column_names": list(self.column_names),
            "beta": self.beta.tolist(),
            "tau_hat": self.tau_hat.tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "gamma": self.gamma.tolist(),
            "zeta1": self.zeta1.tolist(),
            "zeta2": self.zeta2.tolist(),
            "elbo_trace": list(self.elbo_trace),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": self.seed,
            "config": self.config.to_dict(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            gamma=np.asarray(d["gamma"], dtype=float),
            zeta1=np.asarray(d["zeta1"], dtype=float),
            zeta2=np.asarray(d["zeta2"], dtype=float),
            elbo_trace=[float(v) for v in d["elbo_trace"]],
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            config=ModelConfig(**d["config"]),
            seed=d.get("seed"),
            column_names=tuple(d.get("column_names", ())),
            diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def initial_state(network, n_groups, rng, noise=0.1, tau_init=None):
    """Role distributions near uniform (or near ``tau_init``) plus noise.

    Each actor draws one perturbation ``eps_i ~ Dirichlet(1, ..., 1)``; the
    sender roles of (i, j) start at ``(1 - noise) * base_i + noise * eps_i``
    and the receiver roles at the same mixture for actor j. Per-dyad noise
    would average out in gamma and zeta and leave the fit at the symmetric
    saddle. Unobserved dyads get uniform roles. gamma and zeta are left at
    ones and must be refreshed from phi before use.
    """
    n, g = network.n_actors, n_groups
    base = np.full((n, g), 1.0 / g) if tau_init is None else np.asarray(tau_init, dtype=float)
    start = (1.0 - noise) * base + noise * rng.dirichlet(np.ones(g), size=n)
    phi1 = np.repeat(start.T[:, :, None], n, axis=2)
    phi2 = np.repeat(start.T[:, None, :], n, axis=1)
    unobs = ~network.mask
    phi1[:, unobs] = 1.0 / g
    phi2[:, unobs] = 1.0 / g
    return VariationalState(phi1, phi2, np.ones((n, g)), np.ones((g, g)), np.ones((g, g)))


def spectral_memberships(network, n_groups, rng, purity=0.8):
    """Soft memberships from k-means on a singular-vector embedding.

    Unobserved dyads are filled with the observed density. Returns an
    N x G row-stochastic matrix with ``purity`` on the assigned cluster.
    """
    n, g = network.n_actors, n_groups
    if g == 1:
        return np.ones((n, 1))
    a = np.where(network.mask, network.adjacency, network.density()).astype(float)
    np.fill_diagonal(a, 0.0)
    u, sv, vt = np.linalg.svd(a)
    k = min(g, n)
    emb = np.hstack([u[:, :k] * sv[:k], vt[:k].T * sv[:k]])
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    labels = _kmeans(emb, g, rng)
    return purity * np.eye(g)[labels] + (1.0 - purity) / g


def _kmeans(x, k, rng, n_iter=50):
    # k-means++ seeding, then Lloyd iterations
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else rng.choice(n, p=d2 / tot)
        centers.append(x[idx])
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        new = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


def _covariates_for(network, covariates):
    if covariates is None:
        return CovariateMatrix.intercept_only(network.n_actors)
    if covariates.n_actors != network.n_actors:
        raise ValueError(
            f"covariates describe {covariates.n_actors} actors, network has {network.n_actors}"
        )
    return covariates


def run_vb(network, covariates, state, beta, config, seed=None):
    """Coordinate ascent from a given state and beta. ``state`` is consumed.

    gamma and zeta are refreshed from the supplied phi before the first
    sweep. One ELBO value is recorded per sweep (phi, gamma, zeta, beta).
    """
    cov = _covariates_for(network, covariates)
    beta = np.array(beta, dtype=float)
    if beta.shape != (config.n_groups, cov.n_covariates):
        raise ValueError(f"beta must have shape ({config.n_groups}, {cov.n_covariates})")
    delta = beta_mod.prior_concentration(beta, cov)
    state.gamma = update_gamma(state, delta, network)
    state.zeta1, state.zeta2 = update_zeta(state, network, config)
    trace = []
    converged = False
    beta_diag = beta_mod.BetaDiagnostics()
    it = 0
    for it in range(1, config.max_iterations + 1):
        stats = _phi_stats(state, network, config.phi_inner_iterations)
        sent, received, links, nonlinks, _ = stats
        state.gamma = delta + sent + received
        state.zeta1 = links + config.alpha1
        state.zeta2 = nonlinks + config.alpha2
        if config.estimate_beta and config.n_groups > 1 and it % config.beta_interval == 0:
            beta, beta_diag = beta_mod.estimate_beta(
                beta, cov, state.gamma,
                clip_bound=config.clip_bound,
                max_log_concentration=config.max_log_concentration,
                max_iterations=config.newton_max_iterations,
                gradient_tolerance=config.newton_tolerance,
            )
            delta = beta_mod.prior_concentration(beta, cov)
        elbo = _elbo_from_stats(state, delta, config, stats)
        if not np.isfinite(elbo):
            log.error("non-finite ELBO at sweep %d: %s", it, state.summary())
            raise FitDivergenceError(f"non-finite ELBO at sweep {it}", state=state, iteration=it)
        trace.append(elbo)
        if len(trace) > 1:
            prev = trace[-2]
            if abs(elbo - prev) <= config.elbo_rel_tolerance * abs(prev):
                converged = True
                break
    beta_mod.warn_if_degenerate(beta_diag, config.clip_bound)
    return FitResult(
        beta=beta,
        gamma=state.gamma.copy(),
        zeta1=state.zeta1.copy(),
        zeta2=state.zeta2.copy(),
        elbo_trace=trace,
        converged=converged,
        iterations=it,
        config=config,
        seed=seed,
        column_names=cov.column_names,
        diagnostics={"beta": beta_diag.to_dict()},
        state=state,
    )


def _restart_seeds(seed, n):
    ss = np.random.SeedSequence(seed)
    return ss.spawn(n)


def fit(network, covariates=None, beta_init=None, config=None, tau_init=None):
    """Fit the model with ``config.n_restarts`` random starts.

    Returns the restart with the highest final ELBO. Each restart starts
    the role distributions from spectral k-means memberships (or uniform,
    with ``config.init == "random"``) plus per-actor Dirichlet noise.
    ``tau_init`` (N x G) replaces that starting point for warm starts. If
    ``beta_init`` is None, beta starts from the method-of-moments estimate
    computed on the initial gamma.
    """
    if config is None:
        raise ValueError("a ModelConfig is required")
    cov = _covariates_for(network, covariates)
    best = None
    elbos = []
    for restart, child in enumerate(_restart_seeds(config.seed, config.n_restarts)):
        rng = np.random.default_rng(child)
        start = tau_init
        if start is None and config.init == "spectral":
            start = spectral_memberships(network, config.n_groups, rng)
        state = initial_state(network, config.n_groups, rng, config.init_noise, start)
        if beta_init is None:
            beta0 = np.zeros((config.n_groups, cov.n_covariates))
            if config.estimate_beta:
                gamma0 = update_gamma(state, beta_mod.prior_concentration(beta0, cov), network)
                beta0 = beta_mod.init_beta_mom(
                    gamma0, cov, config.clip_bound, config.mom_average_components
                )
        else:
            beta0 = np.asarray(beta_init, dtype=float)
        res = run_vb(network, cov, state, beta0, config, seed=config.seed)
        res.diagnostics["restart"] = restart
        elbos.append(res.elbo)
        log.debug("restart %d: elbo %.6f after %d sweeps", restart, res.elbo, res.iterations)
        if best is None or res.elbo > best.elbo:
            best = res
    best.diagnostics["restart_elbos"] = elbos
    return best
