"""Sampling networks from the generative model.

For each actor ``tau_i ~ Dirichlet(exp(W_i beta^T))``; each block
probability is fixed or drawn from a Beta; for every ordered pair (i, j),
i != j, a sender role ``g ~ tau_i`` and receiver role ``h ~ tau_j`` are
drawn and then ``Y_ij ~ Bernoulli(theta[g, h])``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .beta import prior_concentration
from .network import CovariateMatrix, Network
from .numerics import log_sum_exp


@dataclass
class GenerativeSpec:
    """Parameters of one simulation.

    Give either ``theta`` (G x G probabilities in [0, 1]) or
    ``theta_shapes`` (a pair of G x G positive Beta shape arrays).
    """

    covariates: CovariateMatrix
    beta: np.ndarray
    theta: np.ndarray = None
    theta_shapes: tuple = None
    seed: object = None

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        g = self.beta.shape[0]
        if self.beta.shape[1] != self.covariates.n_covariates:
            raise ValueError(
                f"beta has {self.beta.shape[1]} columns, covariates have "
                f"{self.covariates.n_covariates}"
            )
        if (self.theta is None) == (self.theta_shapes is None):
            raise ValueError("give exactly one of theta or theta_shapes")
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float)
            if self.theta.shape != (g, g):
                raise ValueError(f"theta must be {g} x {g}")
            if np.any(self.theta < 0) or np.any(self.theta > 1) or not np.all(np.isfinite(self.theta)):
                raise ValueError("theta entries must be probabilities")
        else:
            a, b = (np.broadcast_to(np.asarray(s, dtype=float), (g, g)) for s in self.theta_shapes)
            if not (np.all(a > 0) and np.all(b > 0)):
                raise ValueError("Beta shapes must be positive")
            self.theta_shapes = (a.copy(), b.copy())

    @property
    def n_actors(self):
        return self.covariates.n_actors

    @property
    def n_groups(self):
        return self.beta.shape[0]

    def concentrations(self):
        delta = prior_concentration(self.beta, self.covariates)
        if not np.all(np.isfinite(delta)) or np.any(delta <= 0):
            raise ValueError("exp(W beta) is not finite and positive for every actor")
        return delta


@dataclass
class LatentRecord:
    """Latent draws behind a simulated network.

    ``sender[i, j]`` / ``receiver[i, j]`` are 0-based role indices, -1 on
    the diagonal.
    """

    tau: np.ndarray
    theta: np.ndarray
    sender: np.ndarray
    receiver: np.ndarray

    def write_tau_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["actor"] + [f"tau{g + 1}" for g in range(self.tau.shape[1])])
        for i, row in enumerate(self.tau):
            w.writerow([i + 1] + [repr(float(v)) for v in row])

    def write_roles_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["i", "j", "sender_group", "receiver_group"])
        n = self.sender.shape[0]
        for i in range(n):
            for j in range(n):
                if i != j:
                    w.writerow([i + 1, j + 1, int(self.sender[i, j]) + 1, int(self.receiver[i, j]) + 1])


def sample_dirichlet(alpha, rng):
    """Row-wise Dirichlet draws via log-space Gamma variates.

    Shapes below one use ``Gamma(a) = Gamma(a + 1) * U**(1/a)`` in log
    space, so very small concentrations do not underflow to 0/0.
    """
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    log_g = np.log(rng.gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    return np.exp(log_g - log_sum_exp(log_g, axis=1)[:, None])


def _categorical(probs, u):
    # probs: (..., G) rows, u: matching uniforms in [0, 1)
    cum = np.cumsum(probs, axis=-1)
    cum[..., -1] = 1.0
    return np.sum(u[..., None] >= cum, axis=-1).clip(max=probs.shape[-1] - 1)


def sample_links(theta, sender, receiver, rng):
    """Bernoulli links given resolved roles; diagonal left at 0."""
    n = sender.shape[0]
    off = ~np.eye(n, dtype=bool)
    p = np.zeros((n, n))
    p[off] = theta[sender[off], receiver[off]]
    y = (rng.random((n, n)) < p).astype(np.int8)
    y[~off] = 0
    return y


def sample_network(spec, rng=None):
    """Draw a network and its latent record. Deterministic for a fixed seed."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n = spec.n_actors
    tau = sample_dirichlet(spec.concentrations(), rng)
    if spec.theta is not None:
        theta = spec.theta.copy()
    else:
        theta = rng.beta(*spec.theta_shapes)
    sender = _categorical(tau[:, None, :].repeat(n, axis=1), rng.random((n, n)))
    receiver = _categorical(tau[None, :, :].repeat(n, axis=0), rng.random((n, n)))
    np.fill_diagonal(sender, -1)
    np.fill_diagonal(receiver, -1)
    y = sample_links(theta, sender, receiver, rng)
    return Network.from_adjacency(y), LatentRecord(tau, theta, sender, receiver)


def expected_density(spec):
    """Expected link density under a fixed-theta spec.

    Averages ``E[tau_i]^T theta E[tau_j]`` over ordered pairs i != j; for
    actors sharing one prior mean this is ``m^T theta m``.
    """
    if spec.theta is None:
        raise ValueError("expected_density needs a fixed theta")
    delta = spec.concentrations()
    mean = delta / delta.sum(axis=1, keepdims=True)
    n = spec.n_actors
    if n < 2:
        return 0.0
    total = mean.sum(axis=0)
    all_pairs = total @ spec.theta @ total
    self_pairs = np.einsum("ig,gh,ih->", mean, spec.theta, mean)
    return float((all_pairs - self_pairs) / (n * (n - 1)))


def spec_from_fit(fit, covariates, seed=None, draw_theta=False):
    """Generative spec at the fitted beta and blockmodel.

    Uses the posterior-mean theta, or with ``draw_theta`` the variational
    Beta(zeta1, zeta2) so each simulation draws its own theta.
    """
    if draw_theta:
        return GenerativeSpec(covariates, fit.beta, theta_shapes=(fit.zeta1, fit.zeta2), seed=seed)
    return GenerativeSpec(covariates, fit.beta, theta=fit.theta_hat, seed=seed)
